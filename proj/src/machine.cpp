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

#include "memsim/machine.hpp"

#include <algorithm>
#include <cmath>

namespace memsim {

const char* to_string(ActorKind k) {
    switch (k) {
        case ActorKind::attacker: return "attacker";
        case ActorKind::victim: return "victim";
        case ActorKind::benign: return "benign";
        case ActorKind::os: return "os";
    }
    return "?";
}

PerfCounters PerfCounters::operator-(const PerfCounters& o) const {
    PerfCounters r;
    r.cache_references = cache_references - o.cache_references;
    r.cache_misses = cache_misses - o.cache_misses;
    r.l1d_rm = l1d_rm - o.l1d_rm;
    r.ll_ra = ll_ra - o.ll_ra;
    r.itlb_ra = itlb_ra - o.itlb_ra;
    r.itlb_wa = itlb_wa - o.itlb_wa;
    r.dtlb_ra = dtlb_ra - o.dtlb_ra;
    r.dtlb_rm = dtlb_rm - o.dtlb_rm;
    r.instructions = instructions - o.instructions;
    return r;
}

PerfCounters& PerfCounters::operator+=(const PerfCounters& o) {
    cache_references += o.cache_references;
    cache_misses += o.cache_misses;
    l1d_rm += o.l1d_rm;
    ll_ra += o.ll_ra;
    itlb_ra += o.itlb_ra;
    itlb_wa += o.itlb_wa;
    dtlb_ra += o.dtlb_ra;
    dtlb_rm += o.dtlb_rm;
    instructions += o.instructions;
    return *this;
}

nlohmann::json PerfCounters::to_json() const {
    return {{"CACHE_REFERENCES", cache_references}, {"CACHE_MISSES", cache_misses}, {"L1D_RM", l1d_rm},
            {"LL_RA", ll_ra},           {"ITLB_RA", itlb_ra},           {"ITLB_WA", itlb_wa},
            {"DTLB_RA", dtlb_ra},       {"DTLB_RM", dtlb_rm},           {"INSTRUCTIONS", instructions}};
}

void Trace::write_jsonl(std::ostream& os) const {
    for (const auto& e : events) {
        nlohmann::json j = {{"t", e.time},   {"actor", e.actor},     {"op", e.op},
                            {"v", e.vaddr},  {"p", e.paddr},         {"lat", e.latency},
                            {"level", e.level}};
        os << j.dump() << '\n';
    }
    for (const auto& f : faults) {
        nlohmann::json j = {{"t", f.time}, {"actor", f.actor}, {"op", "fault"}, {"v", f.vaddr}, {"reason", f.reason}};
        os << j.dump() << '\n';
    }
}

void Trace::write_csv(std::ostream& os) const {
    os << "time,actor,op,vaddr,paddr,latency,level\n";
    for (const auto& e : events)
        os << e.time << ',' << e.actor << ',' << e.op << ',' << e.vaddr << ',' << e.paddr << ',' << e.latency << ','
           << unsigned(e.level) << '\n';
}

// ---------------------------------------------------------------- Os

Os::Os(Machine& m) : m_(m) {
    u64 frames = m.mem_.frames();
    if (frames < 4096) throw SimError("config", "physical memory too small");
    use_.assign(frames, u8(FrameUse::free));
    // low 1 MB belongs to the kernel image
    for (u64 i = 0; i < 256; ++i) use_[i] = u8(FrameUse::kernel);
    next_data_ = 256;
    next_table_ = frames;
    m.mmu_.set_table_allocator([this] { return alloc_table_frame(); });

    kernel_root_ = alloc_table_frame() * kPage;
    Mmu& mmu = m.mmu_;
    u64 dmap_flags = pte::writable | pte::no_exec;
    for (PAddr p = 0; p < m.mem_.size(); p += kPage2M)
        mmu.map(kernel_root_, m.cfg_.direct_map_base + p, p, PageSize::m2, dmap_flags);
    trampoline_frame_ = 1;
    m.mem_.fill_frame(trampoline_frame_, 0x90);
    mmu.map(kernel_root_, kTrampoline, trampoline_frame_ * kPage, PageSize::k4, 0);
}

u64 Os::alloc_table_frame() {
    if (next_table_ == 0 || next_table_ - 1 <= next_data_) throw SimError("oom", "out of page-table frames");
    u64 pfn = --next_table_;
    use_[pfn] = u8(FrameUse::table);
    m_.mem_.zero_frame(pfn);
    return pfn;
}

u64 Os::alloc_frame(FrameUse use) {
    u64 pfn;
    if (!free_.empty()) {
        pfn = free_.back();
        free_.pop_back();
    } else {
        // keep a small gap so the page-table pool can still grow
        if (next_data_ + 64 >= next_table_) throw SimError("oom", "out of data frames");
        pfn = next_data_++;
    }
    use_[pfn] = u8(use);
    m_.mem_.zero_frame(pfn);
    return pfn;
}

u64 Os::alloc_frames_2m() {
    u64 start = (next_data_ + 511) & ~u64(511);
    if (start + 512 + 64 >= next_table_) throw SimError("oom", "out of 2 MB frames");
    for (u64 p = next_data_; p < start; ++p) free_.push_back(p);
    for (u64 p = start; p < start + 512; ++p) {
        use_[p] = u8(FrameUse::user_huge);
        m_.mem_.zero_frame(p);
    }
    next_data_ = start + 512;
    return start;
}

void Os::free_frame(u64 pfn) {
    m_.mem_.zero_frame(pfn);
    use_[pfn] = u8(FrameUse::free);
    free_.push_back(pfn);
}

u64 Os::frames_in_use(FrameUse u) const {
    return static_cast<u64>(std::count(use_.begin(), use_.end(), u8(u)));
}

AddressSpace& Os::create_space() {
    auto as = std::make_unique<AddressSpace>();
    as->id = static_cast<u32>(spaces_.size());
    as->user_root = alloc_table_frame() * kPage;
    for (unsigned s = 256; s < 512; ++s) m_.mmu_.share_pml4_slot(kernel_root_, as->user_root, s);
    as->kernel_root = as->user_root;
    if (isolation_) isolate(*as);
    spaces_.push_back(std::move(as));
    return *spaces_.back();
}

void Os::isolate(AddressSpace& as) {
    Mmu& mmu = m_.mmu_;
    as.kernel_root = alloc_table_frame() * kPage;
    for (unsigned s = 0; s < 512; ++s) mmu.share_pml4_slot(s < 256 ? as.user_root : kernel_root_, as.kernel_root, s);
    for (unsigned s = 256; s < 512; ++s) m_.mem_.write64(as.user_root + 8ull * s, 0);
    mmu.map(as.user_root, kTrampoline, trampoline_frame_ * kPage, PageSize::k4, 0);
}

void Os::unisolate(AddressSpace& as) {
    for (unsigned s = 256; s < 512; ++s) m_.mmu_.share_pml4_slot(kernel_root_, as.user_root, s);
    as.kernel_root = as.user_root;
}

void Os::set_isolation(bool on) {
    if (on == isolation_) return;
    for (auto& as : spaces_) {
        if (on) isolate(*as);
        else unisolate(*as);
    }
    isolation_ = on;
    m_.mmu_.flush_all();
    for (auto& a : m_.actors_) a->itlb_.clear();
}

void Os::sync_kernel_view(AddressSpace& as) {
    if (!isolation_) return;
    for (unsigned s = 0; s < 256; ++s) m_.mmu_.share_pml4_slot(as.user_root, as.kernel_root, s);
}

void Os::track(u64 pfn, u32 space, VAddr v) { rmap_[pfn].emplace_back(space, v); }

void Os::untrack(u64 pfn, u32 space, VAddr v) {
    auto it = rmap_.find(pfn);
    if (it == rmap_.end()) return;
    std::erase(it->second, std::make_pair(space, v));
    if (it->second.empty()) rmap_.erase(it);
}

VAddr Os::mmap(AddressSpace& as, u64 bytes, PageSize size, u64 flags, bool mergeable) {
    if (bytes == 0) throw SimError("bad_size", "zero-length mapping");
    Mmu& mmu = m_.mmu_;
    VAddr base;
    if (size == PageSize::m2) {
        u64 n = (bytes + kPage2M - 1) / kPage2M;
        base = as.next_huge;
        for (u64 i = 0; i < n; ++i)
            mmu.map(as.user_root, base + i * kPage2M, alloc_frames_2m() * kPage, PageSize::m2, flags);
        as.next_huge += n * kPage2M;
    } else if (size == PageSize::k4) {
        u64 n = (bytes + kPage - 1) / kPage;
        base = as.next_small;
        for (u64 i = 0; i < n; ++i) {
            u64 pfn = alloc_frame(FrameUse::user);
            mmu.map(as.user_root, base + i * kPage, pfn * kPage, PageSize::k4, flags);
            if (mergeable) track(pfn, as.id, base + i * kPage);
        }
        as.next_small += (n + 1) * kPage;
    } else {
        throw SimError("unsupported", "1 GB user pages are not allocated by the OS model");
    }
    sync_kernel_view(as);
    return base;
}

VAddr Os::map_frames(AddressSpace& as, std::span<const u64> pfns, u64 flags, bool mergeable) {
    VAddr base = as.next_small;
    for (std::size_t i = 0; i < pfns.size(); ++i) {
        m_.mmu_.map(as.user_root, base + i * kPage, pfns[i] * kPage, PageSize::k4, flags);
        if (mergeable && use_of(pfns[i]) == FrameUse::user) track(pfns[i], as.id, base + i * kPage);
    }
    as.next_small += (pfns.size() + 1) * kPage;
    sync_kernel_view(as);
    return base;
}

void Os::map_at(AddressSpace& as, VAddr v, u64 pfn, PageSize size, u64 flags, bool mergeable) {
    m_.mmu_.map(as.user_root, v, pfn * kPage, size, flags);
    if (mergeable && size == PageSize::k4) track(pfn, as.id, v);
    sync_kernel_view(as);
}

void Os::unmap(AddressSpace& as, VAddr v) {
    v &= ~(kPage - 1);
    if (auto m = m_.mmu_.lookup(as.user_root, v)) untrack(m->paddr / kPage, as.id, v);
    m_.mmu_.unmap(as.user_root, v);
    m_.mmu_.invalidate(as.kernel_root, v);
}

std::vector<u64> Os::frames_of(AddressSpace& as, VAddr v, u64 bytes) const {
    std::vector<u64> out;
    for (VAddr p = v & ~(kPage - 1); p < v + bytes; p += kPage) {
        auto m = m_.mmu_.lookup(as.user_root, p);
        if (!m) throw SimError("not_mapped", "range is not fully mapped");
        out.push_back(m->paddr / kPage);
    }
    return out;
}

std::optional<PAddr> Os::virt_to_phys(const AddressSpace& as, VAddr v) const {
    if (auto m = m_.mmu_.lookup(as.user_root, v)) return m->paddr;
    return std::nullopt;
}

VAddr Os::direct_map(PAddr p) const { return m_.cfg_.direct_map_base + p; }

bool Os::is_cow(const AddressSpace& as, VAddr v) const {
    auto m = m_.mmu_.lookup(as.user_root, v);
    return m && (m->flags & pte::cow);
}

std::size_t Os::dedup_scan() {
    std::map<u64, std::vector<u64>> by_hash;
    for (const auto& [pfn, maps] : rmap_) by_hash[m_.mem_.frame_hash(pfn)].push_back(pfn);

    std::size_t merges = 0;
    Mmu& mmu = m_.mmu_;
    for (auto& [h, group] : by_hash) {
        std::vector<std::vector<u64>> classes;
        for (u64 pfn : group) {
            auto it = std::find_if(classes.begin(), classes.end(),
                                   [&](const auto& c) { return m_.mem_.frames_equal(c.front(), pfn); });
            if (it == classes.end()) classes.push_back({pfn});
            else it->push_back(pfn);
        }
        for (auto& cls : classes) {
            if (cls.size() < 2) continue;
            u64 canon = cls.front();
            for (u64 pfn : cls) {
                auto maps = rmap_[pfn];
                for (auto [sid, v] : maps) {
                    AddressSpace& as = *spaces_[sid];
                    mmu.set_leaf(as.user_root, v, canon * kPage, pte::user | pte::cow);
                    mmu.invalidate(as.kernel_root, v);
                }
                if (pfn != canon) {
                    auto& dst = rmap_[canon];
                    dst.insert(dst.end(), maps.begin(), maps.end());
                    rmap_.erase(pfn);
                    free_frame(pfn);
                    ++merges;
                }
            }
        }
    }
    return merges;
}

void Os::break_cow(AddressSpace& as, VAddr v) {
    v &= ~(kPage - 1);
    auto m = m_.mmu_.lookup(as.user_root, v);
    if (!m || !(m->flags & pte::cow)) return;
    u64 old = m->paddr / kPage;
    auto it = rmap_.find(old);
    u64 target = old;
    if (it != rmap_.end() && it->second.size() > 1) {
        target = alloc_frame(FrameUse::user);
        m_.mem_.copy_frame(target, old);
        untrack(old, as.id, v);
        track(target, as.id, v);
    }
    m_.mmu_.set_leaf(as.user_root, v, target * kPage, pte::user | pte::writable);
    m_.mmu_.invalidate(as.kernel_root, v);
}

// ---------------------------------------------------------------- Cpu

Cpu::Cpu(Machine& m, u32 id, std::string name, ActorKind kind, unsigned core, AddressSpace* as)
    : m_(m), id_(id), name_(std::move(name)), kind_(kind), core_(core), as_(as) {}

void Cpu::start(Task t) {
    task_ = std::move(t);
    resume_ = task_.handle();
}

void Cpu::fault(VAddr v, const std::string& reason) {
    m_.trace_.faults.push_back({m_.now_, id_, v, reason});
    m_.now_ += m_.cfg_.fault_latency;
    throw SimError("actor_fault", name_ + ": " + reason);
}

void Cpu::account(const AccessResult& a, bool load) {
    if (a.llc_ref()) ++ctr_.cache_references;
    if (a.llc_miss()) ++ctr_.cache_misses;
    if (load && a.level > HitLevel::l1) ++ctr_.l1d_rm;
    if (load && a.llc_ref()) ++ctr_.ll_ra;
}

void Cpu::emit(const char* op, VAddr v, PAddr p, u32 lat, HitLevel lvl) {
    if (m_.trace_.enabled) m_.trace_.events.push_back({m_.now_, id_, op, v, p, lat, u8(lvl)});
}

Cpu::Res Cpu::mem_access(VAddr v, Intent intent, u64 value) {
    ++ctr_.instructions;
    m_.walk_core_ = core_;
    Privilege priv = kernel_ ? Privilege::kernel : Privilege::user;
    auto tr = m_.mmu_.translate(root(), v, priv, intent);
    ++ctr_.dtlb_ra;
    if (!tr.tlb_hit) ++ctr_.dtlb_rm;
    u32 walk = tr.latency;
    bool cow = false;
    if (!tr.ok) {
        bool present = tr.privilege_fault || tr.write_fault;
        if (tr.write_fault && (tr.map.flags & pte::cow)) {
            m_.os_->break_cow(*as_, v);
            tr = m_.mmu_.translate(root(), v, priv, intent);
            walk += tr.latency;
            cow = tr.ok;
        }
        if (!tr.ok) fault(v, !present ? "not_present" : tr.privilege_fault ? "privilege" : "write_protect");
    }
    bool load = intent != Intent::store;
    auto acc = m_.caches_.access(tr.map.paddr, core_, load ? AccessKind::read : AccessKind::write, v);
    account(acc, load);
    u32 lat = walk + acc.latency;
    if (cow) lat *= m_.cfg_.dedup.cow_multiplier;
    lat = m_.jitter(lat);
    m_.now_ += lat;
    Res r;
    r.latency = lat;
    r.level = acc.level;
    if (load) r.value = m_.mem_.read64(tr.map.paddr);
    else m_.mem_.write64(tr.map.paddr, value);
    emit(load ? "read" : "write", v, tr.map.paddr, lat, acc.level);
    return r;
}

Cpu::Res Cpu::read(VAddr v) { return mem_access(v, Intent::load, 0); }
Cpu::Res Cpu::write(VAddr v, u64 value) { return mem_access(v, Intent::store, value); }

u32 Cpu::clflush(VAddr v) {
    ++ctr_.instructions;
    m_.walk_core_ = core_;
    auto tr = m_.mmu_.translate(root(), v, kernel_ ? Privilege::kernel : Privilege::user, Intent::load);
    ++ctr_.dtlb_ra;
    if (!tr.tlb_hit) ++ctr_.dtlb_rm;
    if (!tr.ok) fault(v, "flush_fault");
    u32 lat = m_.jitter(tr.latency + m_.caches_.flush(tr.map.paddr, core_));
    m_.now_ += lat;
    emit("clflush", v, tr.map.paddr, lat, HitLevel::l1);
    return lat;
}

u32 Cpu::prefetch(VAddr v) {
    ++ctr_.instructions;
    m_.walk_core_ = core_;
    const auto& pl = m_.mmu_.prefetch_latency();
    Depth depth;
    PAddr p = 0;
    if (auto map = m_.mmu_.lookup(root(), v)) {
        p = map->paddr;
        depth = m_.caches_.cached(p) ? Depth::cached : Depth::valid_uncached;
        account(m_.caches_.access(p, core_, AccessKind::read), false);
        m_.mmu_.note_prefetch(root(), v, *map);
    } else {
        depth = m_.mmu_.resolve_depth(root(), v);
    }
    u32 lat = m_.jitter(pl.of(depth));
    m_.now_ += lat;
    emit("prefetch", v, p, lat, HitLevel::l1);
    return lat;
}

Cycles Cpu::rdtsc() {
    ++ctr_.instructions;
    m_.now_ += m_.cfg_.rdtsc_latency;
    return m_.now_;
}

void Cpu::serialize() {
    ++ctr_.instructions;
    m_.now_ += m_.cfg_.serialize_latency;
}

void Cpu::compute(u32 cycles) {
    u32 per = std::max<u32>(1, m_.cfg_.instr_latency);
    ctr_.instructions += std::max<u32>(1, cycles / per);
    m_.now_ += cycles;
}

void Cpu::pause(u32 cycles) {
    ++ctr_.instructions;
    m_.now_ += cycles;
}

Cpu::Res Cpu::exec(VAddr code) {
    ++ctr_.instructions;
    m_.walk_core_ = core_;
    u64 page = code >> 12;
    u32 walk = 0;
    std::optional<Mapping> map;
    if (page != (code_ >> 12)) {
        ++ctr_.itlb_ra;
        if (auto hit = itlb_.get(root(), page)) {
            Mapping mm;
            mm.paddr = *hit + (code & (kPage - 1));
            map = mm;
        } else {
            ++ctr_.itlb_wa;
            auto tr = m_.mmu_.translate(root(), code, kernel_ ? Privilege::kernel : Privilege::user, Intent::exec);
            if (!tr.ok) fault(code, "exec_fault");
            walk = tr.latency;
            itlb_.put(root(), page, tr.map.paddr & ~(kPage - 1));
            map = tr.map;
        }
    } else {
        auto hit = itlb_.get(root(), page);
        if (hit) {
            Mapping mm;
            mm.paddr = *hit + (code & (kPage - 1));
            map = mm;
        } else {
            map = m_.mmu_.lookup(root(), code);
            if (!map) fault(code, "exec_fault");
            itlb_.put(root(), page, map->paddr & ~(kPage - 1));
        }
    }
    code_ = code;
    auto acc = m_.caches_.access(map->paddr, core_, AccessKind::code);
    account(acc, false);
    u32 lat = m_.jitter(walk + acc.latency);
    m_.now_ += lat;
    emit("exec", code, map->paddr, lat, acc.level);
    return Res{0, lat, acc.level};
}

u64 Cpu::syscall(u32 routine, std::span<const u64> args) {
    ++ctr_.instructions;
    m_.now_ += m_.cfg_.syscall_latency;
    VAddr back = code_;
    bool iso = m_.os_->isolation();
    kernel_ = true;
    exec(Os::kTrampoline);
    if (iso) {
        kroot_ = true;
        m_.mmu_.flush_all();
        itlb_.clear();
    }
    u64 r = 0;
    try {
        r = m_.routine(routine)(*this, args);
    } catch (...) {
        kernel_ = kroot_ = false;
        throw;
    }
    if (iso) {
        kroot_ = false;
        m_.mmu_.flush_all();
        itlb_.clear();
    }
    exec(Os::kTrampoline);
    kernel_ = false;
    exec(back);
    return r;
}

std::optional<PAddr> Cpu::phys(VAddr v) const { return m_.os_->virt_to_phys(*as_, v); }

// ---------------------------------------------------------------- Machine

Machine::Machine(MachineConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      mem_(cfg_.phys_mem),
      dram_(cfg_.dram, cfg_.refresh, cfg_.dram_latency, cfg_.caches.lat.dram_base, cfg_.clock_ghz, &mem_),
      caches_(cfg_.caches, mix_seed(cfg_.seed, 1)),
      mmu_(&mem_, cfg_.tcache, cfg_.prefetch),
      noise_(mix_seed(cfg_.seed, 2)),
      sched_(mix_seed(cfg_.seed, 3)) {
    caches_.set_backend([this](PAddr p) { return dram_.access_row(p, now_).latency; });
    mmu_.set_entry_reader([this](PAddr p) { return caches_.access(p, walk_core_).latency; });
    os_ = std::make_unique<Os>(*this);
    if (cfg_.flips.density_per_gb > 0) dram_.seed_flip_map(cfg_.flips, cfg_.phys_mem);
    if (cfg_.kernel_isolation) os_->set_isolation(true);
    next_scan_ = cfg_.dedup.scan_period;
}

u32 Machine::jitter(u32 latency) {
    if (cfg_.jitter_sigma <= 0) return latency;
    double x = std::round(latency + cfg_.jitter_sigma * noise_.normal());
    return x < 1 ? 1u : static_cast<u32>(x);
}

Cpu& Machine::spawn(const std::string& name, ActorKind kind, unsigned core, Cpu* share_with) {
    if (core >= cfg_.caches.cores) throw SimError("config", "core index out of range for " + name);
    AddressSpace* as = share_with ? &share_with->space() : &os_->create_space();
    u32 id = static_cast<u32>(actors_.size());
    actors_.push_back(std::make_unique<Cpu>(*this, id, name, kind, core, as));
    Cpu& c = *actors_.back();
    c.code_base_ = os_->mmap(*as, kCodePages * kPage, PageSize::k4, pte::user, false);
    for (unsigned i = 0; i < kCodePages; ++i) {
        auto pfn = *os_->virt_to_phys(*as, c.code_page(i)) / kPage;
        mem_.fill_frame(pfn, static_cast<u8>(0xc3 ^ id ^ i));
    }
    c.code_ = c.code_base_;
    return c;
}

u32 Machine::register_routine(Routine r) {
    routines_.push_back(std::move(r));
    return static_cast<u32>(routines_.size() - 1);
}

VAddr Machine::share_mapping(Cpu& a, VAddr va, u64 bytes, Cpu& b, u64 flags) {
    auto pfns = os_->frames_of(a.space(), va, bytes);
    VAddr base = os_->map_frames(b.space(), pfns, flags, false);
    return base + (va & (kPage - 1));
}

void Machine::set_sampler(Cycles period, std::function<void(Cycles)> fn) {
    if (period == 0) throw SimError("bad_period", "sampling period must be positive");
    sample_period_ = period;
    sampler_ = std::move(fn);
    next_sample_ = (now_ / period + 1) * period;
}

RunResult Machine::run(Schedule s, Cycles budget, u64 max_turns) {
    RunResult r;
    Cycles start = now_;
    std::vector<Cpu*> live;
    std::size_t rr = 0;
    Cpu* cur = nullptr;
    u64 left = 0;
    while (true) {
        live.clear();
        for (auto& a : actors_)
            if (a->resume_ && !a->finished()) live.push_back(a.get());
        if (live.empty()) {
            r.completed = true;
            break;
        }
        if (now_ - start >= budget || r.turns >= max_turns) {
            r.budget_exhausted = true;
            break;
        }
        Cpu* pick;
        if (s == Schedule::round_robin) {
            pick = live[rr++ % live.size()];
        } else {
            if (left == 0 || !cur || std::find(live.begin(), live.end(), cur) == live.end()) {
                cur = live[sched_.below(live.size())];
                left = sched_.geometric(interleave_p);
            }
            pick = cur;
            --left;
        }
        auto h = std::exchange(pick->resume_, {});
        h.resume();
        ++r.turns;
        if (pick->task_.done()) {
            auto& err = pick->task_.handle().promise().error;
            if (err) std::rethrow_exception(err);
        }
        if (cfg_.dedup.enabled && cfg_.dedup.scan_period && now_ >= next_scan_) {
            os_->dedup_scan();
            next_scan_ = now_ + cfg_.dedup.scan_period;
        }
        if (sampler_ && now_ >= next_sample_) {
            sampler_(now_);
            next_sample_ = (now_ / sample_period_ + 1) * sample_period_;
        }
    }
    r.end = now_;
    return r;
}

}  // namespace memsim
