/*
 * Copyright 2026 The memsim Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <coroutine>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "memsim/cache.hpp"
#include "memsim/config.hpp"
#include "memsim/dram.hpp"
#include "memsim/mmu.hpp"
#include "memsim/physmem.hpp"

namespace memsim {

class Machine;
class Cpu;

enum class ActorKind { attacker, victim, benign, os };
enum class Schedule { round_robin, seeded_interleave };
const char* to_string(ActorKind k);

struct PerfCounters {
    u64 cache_references = 0;
    u64 cache_misses = 0;
    u64 l1d_rm = 0;
    u64 ll_ra = 0;
    u64 itlb_ra = 0;
    u64 itlb_wa = 0;
    u64 dtlb_ra = 0;
    u64 dtlb_rm = 0;
    u64 instructions = 0;

    PerfCounters operator-(const PerfCounters& o) const;
    PerfCounters& operator+=(const PerfCounters& o);
    nlohmann::json to_json() const;
};

// Coroutine used for actor programs. Awaiting a Task runs it as a subroutine.
class Task {
public:
    struct promise_type {
        std::coroutine_handle<> continuation = std::noop_coroutine();
        std::exception_ptr error;

        Task get_return_object() { return Task{std::coroutine_handle<promise_type>::from_promise(*this)}; }
        std::suspend_always initial_suspend() noexcept { return {}; }
        struct Final {
            bool await_ready() noexcept { return false; }
            std::coroutine_handle<> await_suspend(std::coroutine_handle<promise_type> h) noexcept {
                return h.promise().continuation;
            }
            void await_resume() noexcept {}
        };
        Final final_suspend() noexcept { return {}; }
        void return_void() {}
        void unhandled_exception() { error = std::current_exception(); }
    };

    Task() = default;
    explicit Task(std::coroutine_handle<promise_type> h) : h_(h) {}
    Task(Task&& o) noexcept : h_(std::exchange(o.h_, {})) {}
    Task& operator=(Task&& o) noexcept {
        if (this != &o) {
            if (h_) h_.destroy();
            h_ = std::exchange(o.h_, {});
        }
        return *this;
    }
    Task(const Task&) = delete;
    ~Task() {
        if (h_) h_.destroy();
    }

    bool await_ready() const noexcept { return false; }
    std::coroutine_handle<> await_suspend(std::coroutine_handle<> parent) {
        h_.promise().continuation = parent;
        return h_;
    }
    void await_resume() {
        if (h_.promise().error) std::rethrow_exception(h_.promise().error);
    }

    std::coroutine_handle<promise_type> handle() const { return h_; }
    bool done() const { return !h_ || h_.done(); }

private:
    std::coroutine_handle<promise_type> h_{};
};

struct AddressSpace {
    u32 id = 0;
    PAddr user_root = 0;
    PAddr kernel_root = 0;
    VAddr next_small = 0x0000100000000000ull;
    VAddr next_huge = 0x0000200000000000ull;
};

enum class FrameUse : u8 { free, kernel, table, user, user_huge };

struct FaultRecord {
    Cycles time;
    u32 actor;
    VAddr vaddr;
    std::string reason;
};

struct TraceEvent {
    Cycles time;
    u32 actor;
    const char* op;
    VAddr vaddr;
    PAddr paddr;
    u32 latency;
    u8 level;
};

struct Trace {
    bool enabled = false;
    std::vector<TraceEvent> events;
    std::vector<FaultRecord> faults;

    void write_jsonl(std::ostream& os) const;
    void write_csv(std::ostream& os) const;
};

class Os {
public:
    explicit Os(Machine& m);

    AddressSpace& create_space();
    AddressSpace& space(u32 id) { return *spaces_.at(id); }
    std::size_t space_count() const { return spaces_.size(); }

    u64 alloc_frame(FrameUse use = FrameUse::user);
    u64 alloc_frames_2m();
    u64 alloc_table_frame();
    void free_frame(u64 pfn);
    FrameUse use_of(u64 pfn) const { return pfn < use_.size() ? FrameUse(use_[pfn]) : FrameUse::free; }
    u64 frames_in_use(FrameUse u) const;

    // Fresh anonymous memory. Large arrays use 2 MB pages when size == m2.
    VAddr mmap(AddressSpace& as, u64 bytes, PageSize size = PageSize::k4, u64 flags = pte::user | pte::writable,
               bool mergeable = true);
    // Maps existing 4 KB frames contiguously; returns the base.
    VAddr map_frames(AddressSpace& as, std::span<const u64> pfns, u64 flags = pte::user | pte::writable,
                     bool mergeable = true);
    void map_at(AddressSpace& as, VAddr v, u64 pfn, PageSize size, u64 flags, bool mergeable = false);
    void unmap(AddressSpace& as, VAddr v);
    std::vector<u64> frames_of(AddressSpace& as, VAddr v, u64 bytes) const;
    std::optional<PAddr> virt_to_phys(const AddressSpace& as, VAddr v) const;

    std::size_t dedup_scan();
    bool is_cow(const AddressSpace& as, VAddr v) const;
    void break_cow(AddressSpace& as, VAddr v);

    void set_isolation(bool on);
    bool isolation() const { return isolation_; }
    VAddr trampoline() const { return kTrampoline; }
    VAddr direct_map(PAddr p) const;
    PAddr kernel_template_root() const { return kernel_root_; }

    static constexpr VAddr kTrampoline = 0xffffffff80000000ull;

private:
    void sync_kernel_view(AddressSpace& as);
    void isolate(AddressSpace& as);
    void unisolate(AddressSpace& as);
    void track(u64 pfn, u32 space, VAddr v);
    void untrack(u64 pfn, u32 space, VAddr v);

    Machine& m_;
    std::vector<u8> use_;
    u64 next_data_;
    u64 next_table_;
    std::vector<u64> free_;
    PAddr kernel_root_ = 0;
    u64 trampoline_frame_ = 0;
    bool isolation_ = false;
    std::vector<std::unique_ptr<AddressSpace>> spaces_;
    // mergeable 4 KB frames -> (space, vaddr) mappings
    std::map<u64, std::vector<std::pair<u32, VAddr>>> rmap_;
};

// A victim routine reachable through syscall(); runs on the caller's Cpu in kernel mode.
using Routine = std::function<u64(Cpu&, std::span<const u64>)>;

// Per-actor instruction interface. Every instruction advances virtual time by its
// latency; the latency returned equals an rdtsc-bracketed measurement of it.
class Cpu {
public:
    struct Res {
        u64 value = 0;
        u32 latency = 0;
        HitLevel level = HitLevel::l1;
    };

    Cpu(Machine& m, u32 id, std::string name, ActorKind kind, unsigned core, AddressSpace* as);

    Res read(VAddr v);
    Res write(VAddr v, u64 value);
    u32 clflush(VAddr v);
    u32 prefetch(VAddr v);
    Cycles rdtsc();
    void serialize();
    void compute(u32 cycles);
    void pause(u32 cycles = 10);
    // Instruction fetch at `code`; switching code pages drives the ITLB counters.
    Res exec(VAddr code);
    u64 syscall(u32 routine, std::span<const u64> args = {});

    // Scoped call into code at another page; returns to the previous page on exit.
    class Call {
    public:
        Call(Cpu& c, VAddr target) : c_(c), back_(c.code_) { c_.exec(target); }
        ~Call() { c_.exec(back_); }
        Call(const Call&) = delete;
        Call& operator=(const Call&) = delete;

    private:
        Cpu& c_;
        VAddr back_;
    };

    struct Yield {
        Cpu* c;
        bool await_ready() const noexcept { return false; }
        void await_suspend(std::coroutine_handle<> h) noexcept { c->resume_ = h; }
        void await_resume() const noexcept {}
    };
    Yield yield() { return Yield{this}; }

    // Untimed pagemap lookup (attackers granted physical-address knowledge).
    std::optional<PAddr> phys(VAddr v) const;

    u32 id() const { return id_; }
    const std::string& name() const { return name_; }
    ActorKind kind() const { return kind_; }
    unsigned core() const { return core_; }
    AddressSpace& space() { return *as_; }
    const PerfCounters& counters() const { return ctr_; }
    PerfCounters& counters() { return ctr_; }
    bool kernel_mode() const { return kernel_; }
    VAddr code_base() const { return code_base_; }
    VAddr code_page(unsigned i) const { return code_base_ + kPage * i; }
    Machine& machine() { return m_; }

    void start(Task t);
    bool finished() const { return task_.done(); }

private:
    friend class Machine;
    friend class Os;
    Res mem_access(VAddr v, Intent intent, u64 value);
    PAddr root() const { return kroot_ ? as_->kernel_root : as_->user_root; }
    void account(const AccessResult& a, bool load);
    void emit(const char* op, VAddr v, PAddr p, u32 lat, HitLevel lvl);
    [[noreturn]] void fault(VAddr v, const std::string& reason);

    Machine& m_;
    u32 id_;
    std::string name_;
    ActorKind kind_;
    unsigned core_;
    AddressSpace* as_;
    PerfCounters ctr_;
    bool kernel_ = false;
    bool kroot_ = false;
    VAddr code_ = 0;
    VAddr code_base_ = 0;
    LruTable itlb_{64};
    Task task_;
    std::coroutine_handle<> resume_{};
};

struct RunResult {
    Cycles end = 0;
    u64 turns = 0;
    bool budget_exhausted = false;
    bool completed = false;
};

class Machine {
public:
    static constexpr unsigned kCodePages = 16;

    explicit Machine(MachineConfig cfg);
    Machine(const Machine&) = delete;
    Machine& operator=(const Machine&) = delete;

    const MachineConfig& config() const { return cfg_; }
    CacheHierarchy& caches() { return caches_; }
    Dram& dram() { return dram_; }
    Mmu& mmu() { return mmu_; }
    PhysicalMemory& mem() { return mem_; }
    Os& os() { return *os_; }
    Trace& trace() { return trace_; }

    Cycles now() const { return now_; }
    void advance(Cycles c) { now_ += c; }

    // New actor with its own address space unless `share_with` is given.
    Cpu& spawn(const std::string& name, ActorKind kind, unsigned core, Cpu* share_with = nullptr);
    Cpu& actor(u32 id) { return *actors_.at(id); }
    std::size_t actor_count() const { return actors_.size(); }

    u32 register_routine(Routine r);
    const Routine& routine(u32 id) const { return routines_.at(id); }

    // Maps the physical frames behind [va, va+bytes) of `a` into `b`.
    VAddr share_mapping(Cpu& a, VAddr va, u64 bytes, Cpu& b, u64 flags = pte::user | pte::writable);

    RunResult run(Schedule s, Cycles budget, u64 max_turns = ~0ull);
    // Called from run() after the first turn that reaches each multiple of `period`.
    void set_sampler(Cycles period, std::function<void(Cycles)> fn);
    std::size_t dedup_scan() { return os_->dedup_scan(); }

    u32 jitter(u32 latency);
    double interleave_p = 0.35;

private:
    friend class Cpu;
    friend class Os;

    MachineConfig cfg_;
    PhysicalMemory mem_;
    Dram dram_;
    CacheHierarchy caches_;
    Mmu mmu_;
    std::unique_ptr<Os> os_;
    Trace trace_;
    Cycles now_ = 0;
    Rng noise_;
    Rng sched_;
    unsigned walk_core_ = 0;
    Cycles next_scan_ = 0;
    Cycles sample_period_ = 0;
    Cycles next_sample_ = 0;
    std::function<void(Cycles)> sampler_;
    std::vector<std::unique_ptr<Cpu>> actors_;
    std::vector<Routine> routines_;
};

}  // namespace memsim
