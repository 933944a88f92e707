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

#include "memsim/mmu.hpp"

#include <algorithm>

namespace memsim {

u64 page_bytes(PageSize s) {
    switch (s) {
        case PageSize::k4: return kPage;
        case PageSize::m2: return kPage2M;
        case PageSize::g1: return kPage1G;
    }
    return kPage;
}

const char* to_string(PageSize s) {
    switch (s) {
        case PageSize::k4: return "4K";
        case PageSize::m2: return "2M";
        case PageSize::g1: return "1G";
    }
    return "?";
}

const char* to_string(Depth d) {
    switch (d) {
        case Depth::cached: return "cached";
        case Depth::valid_uncached: return "valid_uncached";
        case Depth::pte_absent: return "pte_absent";
        case Depth::pde_absent: return "pde_absent";
        case Depth::pdpte_absent: return "pdpte_absent";
        case Depth::pml4e_absent: return "pml4e_absent";
    }
    return "?";
}

int level_class(Depth d) {
    switch (d) {
        case Depth::cached: return 0;
        case Depth::valid_uncached: return 1;
        case Depth::pte_absent:
        case Depth::pde_absent: return 2;
        case Depth::pdpte_absent: return 3;
        case Depth::pml4e_absent: return 4;
    }
    return 4;
}

u32 PrefetchLatency::of(Depth d) const {
    switch (d) {
        case Depth::cached: return cached;
        case Depth::valid_uncached: return valid_uncached;
        case Depth::pte_absent: return pte_absent;
        case Depth::pde_absent: return pde_absent;
        case Depth::pdpte_absent: return pdpte_absent;
        case Depth::pml4e_absent: return pml4e_absent;
    }
    return pml4e_absent;
}

std::optional<u64> LruTable::get(u64 root, u64 tag) {
    for (auto& e : e_)
        if (e.root == root && e.tag == tag) {
            e.stamp = ++clock_;
            return e.value;
        }
    return std::nullopt;
}

bool LruTable::contains(u64 root, u64 tag) const {
    return std::any_of(e_.begin(), e_.end(), [&](const E& e) { return e.root == root && e.tag == tag; });
}

void LruTable::put(u64 root, u64 tag, u64 value) {
    if (cap_ == 0) return;
    for (auto& e : e_)
        if (e.root == root && e.tag == tag) {
            e.value = value;
            e.stamp = ++clock_;
            return;
        }
    if (e_.size() < cap_) {
        e_.push_back({root, tag, value, ++clock_});
        return;
    }
    auto victim = std::min_element(e_.begin(), e_.end(), [](const E& a, const E& b) { return a.stamp < b.stamp; });
    *victim = {root, tag, value, ++clock_};
}

void LruTable::erase_if(const std::function<bool(u64, u64)>& pred) {
    std::erase_if(e_, [&](const E& e) { return pred(e.root, e.tag); });
}

Mmu::Mmu(PhysicalMemory* mem, TranslationCacheSizes sizes, PrefetchLatency pl)
    : mem_(mem), pl_(pl), tlb_(sizes.tlb), pde_(sizes.pde), pdpte_(sizes.pdpte), pml4e_(sizes.pml4e) {}

bool Mmu::is_table_frame(u64 pfn) const { return table_set_.count(pfn) != 0; }

PAddr Mmu::child(PAddr table, unsigned idx, u64 flags) {
    u64 e = entry(table, idx);
    if (e & pte::present) {
        if (e & pte::huge) throw SimError("mapping_conflict", "a large page already covers this range");
        // widen permissions on the way down; leaves carry the real restrictions
        u64 widened = e | (flags & (pte::user | pte::writable));
        if (widened != e) mem_->write64(table + 8ull * idx, widened);
        return e & pte::frame_mask;
    }
    if (!alloc_) throw SimError("no_allocator", "page-table allocator not configured");
    u64 pfn = alloc_();
    tables_.push_back(pfn);
    table_set_.insert(pfn);
    PAddr t = pfn * kPage;
    mem_->write64(table + 8ull * idx, t | pte::present | (flags & (pte::user | pte::writable)));
    return t;
}

void Mmu::map(PAddr root, VAddr v, PAddr p, PageSize size, u64 flags) {
    u64 align = page_bytes(size);
    if (v % align || p % align) throw SimError("misaligned", "mapping not aligned to its page size");
    flags |= pte::present;
    PAddr pdpt = child(root, pml4_index(v), flags);
    if (size == PageSize::g1) {
        mem_->write64(pdpt + 8ull * pdpt_index(v), p | flags | pte::huge);
        return;
    }
    PAddr pd = child(pdpt, pdpt_index(v), flags);
    if (size == PageSize::m2) {
        mem_->write64(pd + 8ull * pd_index(v), p | flags | pte::huge);
        return;
    }
    PAddr pt = child(pd, pd_index(v), flags);
    mem_->write64(pt + 8ull * pt_index(v), p | flags);
}

std::optional<Mapping> Mmu::lookup(PAddr root, VAddr v) const {
    PAddr table = root;
    u64 agg = pte::user | pte::writable;
    for (int level = 4; level >= 1; --level) {
        unsigned shift = 12 + 9 * (level - 1);
        PAddr ea = table + 8ull * ((v >> shift) & 511);
        u64 e = mem_->read64(ea);
        if (!(e & pte::present)) return std::nullopt;
        agg &= e | ~(pte::user | pte::writable);
        bool leaf = level == 1 || ((level == 2 || level == 3) && (e & pte::huge));
        if (leaf) {
            u64 span = u64(1) << shift;
            Mapping m;
            m.size = level == 1 ? PageSize::k4 : level == 2 ? PageSize::m2 : PageSize::g1;
            m.paddr = (e & pte::frame_mask & ~(span - 1)) + (v & (span - 1));
            m.flags = (e & pte::flag_mask & ~(pte::user | pte::writable)) | agg;
            m.pte_addr = ea;
            return m;
        }
        table = e & pte::frame_mask;
    }
    return std::nullopt;
}

Depth Mmu::resolve_depth(PAddr root, VAddr v) const {
    PAddr table = root;
    for (int level = 4; level >= 1; --level) {
        unsigned shift = 12 + 9 * (level - 1);
        u64 e = mem_->read64(table + 8ull * ((v >> shift) & 511));
        if (!(e & pte::present)) {
            switch (level) {
                case 4: return Depth::pml4e_absent;
                case 3: return Depth::pdpte_absent;
                case 2: return Depth::pde_absent;
                default: return Depth::pte_absent;
            }
        }
        if (level == 1 || ((level == 2 || level == 3) && (e & pte::huge))) return Depth::valid_uncached;
        table = e & pte::frame_mask;
    }
    return Depth::valid_uncached;
}

bool Mmu::unmap(PAddr root, VAddr v) {
    auto m = lookup(root, v);
    if (!m) return false;
    mem_->write64(m->pte_addr, 0);
    invalidate(root, v);
    return true;
}

bool Mmu::set_leaf(PAddr root, VAddr v, PAddr p, u64 flags) {
    auto m = lookup(root, v);
    if (!m) return false;
    u64 huge = m->size == PageSize::k4 ? 0 : pte::huge;
    mem_->write64(m->pte_addr, p | flags | pte::present | huge);
    invalidate(root, v);
    return true;
}

void Mmu::share_pml4_slot(PAddr from, PAddr to, unsigned slot) {
    mem_->write64(to + 8ull * slot, entry(from, slot));
}

namespace {
u64 tlb_tag(VAddr v, PageSize s) {
    switch (s) {
        case PageSize::k4: return (v >> 12) << 2;
        case PageSize::m2: return ((v >> 21) << 2) | 1;
        case PageSize::g1: return ((v >> 30) << 2) | 2;
    }
    return 0;
}
}  // namespace

void Mmu::fill_tlb(PAddr root, VAddr v, const Mapping& m) {
    u64 span = page_bytes(m.size);
    tlb_.put(root, tlb_tag(v, m.size), ((m.paddr & ~(span - 1)) & pte::frame_mask) | (m.flags & pte::flag_mask));
}

bool Mmu::tlb_contains(PAddr root, VAddr v) const {
    return tlb_.contains(root, tlb_tag(v, PageSize::k4)) || tlb_.contains(root, tlb_tag(v, PageSize::m2)) ||
           tlb_.contains(root, tlb_tag(v, PageSize::g1));
}

void Mmu::note_prefetch(PAddr root, VAddr v, const Mapping& m) {
    if (m.flags & pte::user) fill_tlb(root, v, m);
}

void Mmu::flush_all() {
    tlb_.clear();
    pde_.clear();
    pdpte_.clear();
    pml4e_.clear();
}

void Mmu::invalidate(PAddr root, VAddr v) {
    for (PageSize s : {PageSize::k4, PageSize::m2, PageSize::g1}) {
        u64 t = tlb_tag(v, s);
        tlb_.erase_if([&](u64 r, u64 tag) { return r == root && tag == t; });
    }
    // Paging-structure caches may hold the path; drop everything for this root.
    auto same = [&](u64 r, u64) { return r == root; };
    pde_.erase_if(same);
    pdpte_.erase_if(same);
    pml4e_.erase_if(same);
}

TranslateResult Mmu::translate(PAddr root, VAddr v, Privilege priv, Intent intent) {
    TranslateResult r;
    auto check = [&](const Mapping& m) {
        r.map = m;
        if (priv == Privilege::user && !(m.flags & pte::user)) r.privilege_fault = true;
        else if (intent == Intent::store && !(m.flags & pte::writable)) r.write_fault = true;
        else if (intent == Intent::exec && (m.flags & pte::no_exec)) r.privilege_fault = true;
        r.ok = !r.privilege_fault && !r.write_fault;
        r.depth = Depth::valid_uncached;
    };

    for (PageSize s : {PageSize::k4, PageSize::m2, PageSize::g1}) {
        if (auto hit = tlb_.get(root, tlb_tag(v, s))) {
            u64 span = page_bytes(s);
            Mapping m;
            m.size = s;
            m.paddr = (*hit & pte::frame_mask) + (v & (span - 1));
            m.flags = *hit & pte::flag_mask;
            r.tlb_hit = true;
            check(m);
            return r;
        }
    }

    // Paging-structure caches, deepest first.
    PAddr table = root;
    int level = 4;
    u64 agg = pte::user | pte::writable;
    if (auto e = pde_.get(root, v >> 21)) {
        table = *e & pte::frame_mask;
        agg = *e & (pte::user | pte::writable);
        level = 1;
    } else if (auto e2 = pdpte_.get(root, v >> 30)) {
        table = *e2 & pte::frame_mask;
        agg = *e2 & (pte::user | pte::writable);
        level = 2;
    } else if (auto e3 = pml4e_.get(root, v >> 39)) {
        table = *e3 & pte::frame_mask;
        agg = *e3 & (pte::user | pte::writable);
        level = 3;
    }

    for (; level >= 1; --level) {
        unsigned shift = 12 + 9 * (level - 1);
        PAddr ea = table + 8ull * ((v >> shift) & 511);
        if (read_) r.latency += read_(ea);
        ++r.entry_reads;
        u64 e = mem_->read64(ea);
        if (!(e & pte::present)) {
            r.depth = level == 4 ? Depth::pml4e_absent
                      : level == 3 ? Depth::pdpte_absent
                      : level == 2 ? Depth::pde_absent
                                   : Depth::pte_absent;
            return r;
        }
        agg &= e | ~(pte::user | pte::writable);
        bool leaf = level == 1 || ((level == 2 || level == 3) && (e & pte::huge));
        if (leaf) {
            u64 span = u64(1) << shift;
            Mapping m;
            m.size = level == 1 ? PageSize::k4 : level == 2 ? PageSize::m2 : PageSize::g1;
            m.paddr = (e & pte::frame_mask & ~(span - 1)) + (v & (span - 1));
            m.flags = (e & pte::flag_mask & ~(pte::user | pte::writable)) | agg;
            m.pte_addr = ea;
            check(m);
            if (r.ok) fill_tlb(root, v, m);
            return r;
        }
        PAddr next = e & pte::frame_mask;
        u64 cached = next | agg;
        if (level == 4) pml4e_.put(root, v >> 39, cached);
        else if (level == 3) pdpte_.put(root, v >> 30, cached);
        else if (level == 2) pde_.put(root, v >> 21, cached);
        table = next;
    }
    return r;
}

}  // namespace memsim
