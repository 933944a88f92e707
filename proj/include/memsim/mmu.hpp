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

#include <functional>
#include <optional>
#include <unordered_set>
#include <vector>

#include "memsim/common.hpp"
#include "memsim/physmem.hpp"

namespace memsim {

namespace pte {
constexpr u64 present = 1ull << 0;
constexpr u64 writable = 1ull << 1;
constexpr u64 user = 1ull << 2;
constexpr u64 huge = 1ull << 7;  // PS bit at PDPT / PD level
constexpr u64 cow = 1ull << 9;   // software bit: copy-on-write
constexpr u64 no_exec = 1ull << 63;
constexpr u64 frame_mask = 0x000ffffffffff000ull;
constexpr u64 flag_mask = ~frame_mask;
}  // namespace pte

enum class Privilege { user, kernel };
enum class Intent { load, store, exec };
enum class PageSize { k4, m2, g1 };

u64 page_bytes(PageSize s);
const char* to_string(PageSize s);

// Where a translation attempt ends. Ordered from shallow success to top-level absence.
enum class Depth { cached, valid_uncached, pte_absent, pde_absent, pdpte_absent, pml4e_absent };
const char* to_string(Depth d);

// Coarse class reported by the translation-level probe: 0 cached, 1 valid-uncached,
// 2 PT-invalid, 3 no PD, 4 no PDPT.
int level_class(Depth d);

struct PrefetchLatency {
    u32 cached = 181;
    u32 valid_uncached = 383;
    u32 pte_absent = 202;
    u32 pde_absent = 222;
    u32 pdpte_absent = 246;
    u32 pml4e_absent = 230;

    u32 of(Depth d) const;
};

struct TranslationCacheSizes {
    u32 tlb = 64;
    u32 pde = 16;
    u32 pdpte = 16;
    u32 pml4e = 16;
};

// Fully-associative LRU keyed by (root, tag).
class LruTable {
public:
    explicit LruTable(u32 capacity = 16) : cap_(capacity) {}
    std::optional<u64> get(u64 root, u64 tag);
    bool contains(u64 root, u64 tag) const;
    void put(u64 root, u64 tag, u64 value);
    void erase_if(const std::function<bool(u64 root, u64 tag)>& pred);
    void clear() { e_.clear(); }
    std::size_t size() const { return e_.size(); }

private:
    struct E {
        u64 root, tag, value, stamp;
    };
    u32 cap_;
    u64 clock_ = 0;
    std::vector<E> e_;
};

struct Mapping {
    PAddr paddr = 0;      // translated address (page base + offset)
    PageSize size = PageSize::k4;
    u64 flags = 0;        // effective flags: user/writable are ANDed over levels
    PAddr pte_addr = 0;   // physical address of the leaf entry
};

struct TranslateResult {
    bool ok = false;
    Mapping map{};
    Depth depth = Depth::pml4e_absent;  // on failure: where the walk ended
    bool privilege_fault = false;
    bool write_fault = false;  // includes copy-on-write
    bool tlb_hit = false;
    u32 latency = 0;
    u32 entry_reads = 0;
};

class Mmu {
public:
    using EntryRead = std::function<u32(PAddr)>;  // latency of reading one table entry
    using FrameAlloc = std::function<u64()>;     // returns a zeroed frame number for a table

    Mmu(PhysicalMemory* mem, TranslationCacheSizes sizes, PrefetchLatency pl);

    void set_entry_reader(EntryRead r) { read_ = std::move(r); }
    void set_table_allocator(FrameAlloc a) { alloc_ = std::move(a); }
    const PrefetchLatency& prefetch_latency() const { return pl_; }

    // Table editing (OS side, untimed).
    void map(PAddr root, VAddr v, PAddr p, PageSize size, u64 flags);
    bool unmap(PAddr root, VAddr v);
    bool set_leaf(PAddr root, VAddr v, PAddr p, u64 flags);
    // Shares the top-level entry `slot` of `from` into `to`.
    void share_pml4_slot(PAddr from, PAddr to, unsigned slot);

    // Untimed walk without caches or privilege checks.
    std::optional<Mapping> lookup(PAddr root, VAddr v) const;
    Depth resolve_depth(PAddr root, VAddr v) const;

    TranslateResult translate(PAddr root, VAddr v, Privilege priv, Intent intent);

    // Entry latencies for a prefetch resolving to `depth`.
    u32 prefetch_latency(Depth d) const { return pl_.of(d); }
    // Records a TLB entry for a present user mapping after a prefetch.
    void note_prefetch(PAddr root, VAddr v, const Mapping& m);

    void flush_all();
    void invalidate(PAddr root, VAddr v);
    bool tlb_contains(PAddr root, VAddr v) const;

    // Every physical frame currently used as a translation table.
    const std::vector<u64>& table_frames() const { return tables_; }
    bool is_table_frame(u64 pfn) const;

private:
    u64 entry(PAddr table, unsigned idx) const { return mem_->read64(table + 8ull * idx); }
    PAddr child(PAddr table, unsigned idx, u64 flags);
    void fill_tlb(PAddr root, VAddr v, const Mapping& m);

    PhysicalMemory* mem_;
    PrefetchLatency pl_;
    LruTable tlb_, pde_, pdpte_, pml4e_;
    EntryRead read_;
    FrameAlloc alloc_;
    std::vector<u64> tables_;
    std::unordered_set<u64> table_set_;
};

inline unsigned pml4_index(VAddr v) { return (v >> 39) & 511; }
inline unsigned pdpt_index(VAddr v) { return (v >> 30) & 511; }
inline unsigned pd_index(VAddr v) { return (v >> 21) & 511; }
inline unsigned pt_index(VAddr v) { return (v >> 12) & 511; }
inline VAddr canonical(VAddr v) { return (v & (1ull << 47)) ? (v | 0xffff000000000000ull) : (v & 0x0000ffffffffffffull); }

}  // namespace memsim
