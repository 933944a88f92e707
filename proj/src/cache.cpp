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

#include "memsim/cache.hpp"

#include <algorithm>

namespace memsim {

const char* to_string(HitLevel l) {
    switch (l) {
        case HitLevel::l1: return "L1";
        case HitLevel::l2: return "L2";
        case HitLevel::l3: return "L3";
        case HitLevel::remote: return "remote";
        case HitLevel::dram: return "dram";
    }
    return "?";
}

const char* to_string(Policy p) {
    switch (p) {
        case Policy::lru: return "lru";
        case Policy::random: return "random";
        case Policy::quad_age: return "quad_age";
    }
    return "?";
}

Policy parse_policy(const std::string& s) {
    if (s == "lru") return Policy::lru;
    if (s == "random") return Policy::random;
    if (s == "quad_age" || s == "bip") return Policy::quad_age;
    throw SimError("config", "unknown replacement policy '" + s + "'");
}

Addressing parse_addressing(const std::string& s) {
    if (s == "pipt") return Addressing::pipt;
    if (s == "vipt") return Addressing::vipt;
    if (s == "vivt") return Addressing::vivt;
    throw SimError("config", "unknown addressing mode '" + s + "'");
}

Inclusion parse_inclusion(const std::string& s) {
    if (s == "inclusive") return Inclusion::inclusive;
    if (s == "non_inclusive") return Inclusion::non_inclusive;
    if (s == "exclusive") return Inclusion::exclusive;
    throw SimError("config", "unknown inclusion policy '" + s + "'");
}

void CacheGeometry::validate(u64 smallest_page) const {
    if (!is_pow2(line_size) || !is_pow2(sets) || ways == 0 || slices == 0)
        throw SimError("config", "cache geometry needs power-of-two line size and sets, ways >= 1");
    if (level < 1 || level > 3) throw SimError("config", "cache level must be 1..3");
    if (addressing == Addressing::vipt && u64(line_size) * sets > smallest_page)
        throw SimError("config", "VIPT index bits exceed the page offset");
    if (addressing != Addressing::pipt && level != 1)
        throw SimError("config", "only L1 may be virtually indexed");
}

unsigned set_index(u64 addr, const CacheGeometry& g) {
    return static_cast<unsigned>((addr >> g.offset_bits()) & (g.sets - 1));
}

unsigned slice_of(PAddr p, const SliceHash& h) {
    unsigned id = 0;
    for (std::size_t k = 0; k < h.masks.size(); ++k) id |= parity(p & h.masks[k]) << k;
    return id;
}

void LatencyModel::validate() const {
    if (!(l1_hit < l2_hit && l2_hit < l3_hit && l3_hit < remote_core && remote_core < dram_base))
        throw SimError("config", "latency model must satisfy L1 < L2 < L3 < remote < DRAM");
    if (flush_hit_extra == 0) throw SimError("config", "flush hit extra must be positive");
}

void HierarchyConfig::validate() const {
    if (cores == 0) throw SimError("config", "need at least one core");
    l1.validate();
    if (l2) l2->validate();
    llc.validate();
    if (llc.addressing != Addressing::pipt) throw SimError("config", "LLC must be PIPT");
    if ((1u << slice_hash.masks.size()) != llc.slices)
        throw SimError("config", "slice hash needs log2(slices) masks");
    for (u64 m : slice_hash.masks)
        if (m & ((u64(1) << llc.offset_bits()) - 1))
            throw SimError("config", "slice masks must only cover bits above the line offset");
    lat.validate();
}

unsigned choose_victim(std::span<WayMeta> set, Policy policy, Rng& rng) {
    switch (policy) {
        case Policy::lru: {
            unsigned v = 0;
            for (unsigned w = 1; w < set.size(); ++w)
                if (set[w].stamp < set[v].stamp) v = w;
            return v;
        }
        case Policy::random: return static_cast<unsigned>(rng.below(set.size()));
        case Policy::quad_age: {
            // age 3 = most recently used; age 0 lines are eviction candidates
            for (;;) {
                for (unsigned w = 0; w < set.size(); ++w)
                    if (set[w].age == 0) return w;
                for (auto& m : set) --m.age;
            }
        }
    }
    return 0;
}

CacheArray::CacheArray(const CacheGeometry& g)
    : g_(g), tags_(u64(g.sets) * g.slices * g.ways, kInvalid), meta_(tags_.size()) {}

int CacheArray::find(u32 set, u64 line) const {
    const u64* t = tags_.data() + u64(set) * g_.ways;
    for (u32 w = 0; w < g_.ways; ++w)
        if (t[w] == line) return static_cast<int>(w);
    return -1;
}

void CacheArray::touch(u32 set, int way) {
    auto& m = meta_[u64(set) * g_.ways + way];
    m.stamp = ++clock_;
    m.age = 3;
}

u64 CacheArray::insert(u32 set, u64 line, Rng& rng) {
    u64 base = u64(set) * g_.ways;
    u32 way = g_.ways;
    for (u32 w = 0; w < g_.ways; ++w)
        if (tags_[base + w] == kInvalid) {
            way = w;
            break;
        }
    u64 victim = kInvalid;
    if (way == g_.ways) {
        way = choose_victim(std::span<WayMeta>(meta_.data() + base, g_.ways), g_.policy, rng);
        victim = tags_[base + way];
    }
    tags_[base + way] = line;
    auto& m = meta_[base + way];
    m.stamp = ++clock_;
    bool bimodal = g_.bip_modulus && (set % g_.sets) % g_.bip_modulus == 0;
    m.age = bimodal ? 0 : 3;
    return victim;
}

bool CacheArray::invalidate(u32 set, u64 line) {
    int w = find(set, line);
    if (w < 0) return false;
    tags_[u64(set) * g_.ways + w] = kInvalid;
    meta_[u64(set) * g_.ways + w] = {};
    return true;
}

CacheArray::SetCopy CacheArray::save(u32 set) const {
    u64 b = u64(set) * g_.ways;
    return {set, {tags_.begin() + b, tags_.begin() + b + g_.ways}, {meta_.begin() + b, meta_.begin() + b + g_.ways}};
}

void CacheArray::load(const SetCopy& c) {
    u64 b = u64(c.set) * g_.ways;
    std::copy(c.tags.begin(), c.tags.end(), tags_.begin() + b);
    std::copy(c.meta.begin(), c.meta.end(), meta_.begin() + b);
    for (auto& m : c.meta) clock_ = std::max(clock_, m.stamp);
}

CacheHierarchy::CacheHierarchy(const HierarchyConfig& cfg, u64 seed)
    : cfg_(cfg), off_bits_(cfg.llc.offset_bits()), llc_(cfg.llc), rng_(seed), last_miss_(cfg.cores, ~0ull) {
    cfg_.validate();
    for (u32 c = 0; c < cfg.cores; ++c) {
        l1_.emplace_back(cfg.l1);
        if (cfg.l2) l2_.emplace_back(*cfg.l2);
    }
}

u32 CacheHierarchy::l1_set(PAddr p, std::optional<VAddr> v) const {
    u64 a = (cfg_.l1.addressing == Addressing::vivt && v) ? *v : p;
    return set_index(a, cfg_.l1);
}

u32 CacheHierarchy::l2_set(PAddr p) const { return set_index(p, *cfg_.l2); }

unsigned CacheHierarchy::llc_slice(PAddr p) const { return slice_of(p, cfg_.slice_hash); }

u32 CacheHierarchy::llc_set(PAddr p) const { return llc_slice(p) * cfg_.llc.sets + set_index(p, cfg_.llc); }

void CacheHierarchy::record(AccessResult& r, u64 line) {
    if (line != CacheArray::kInvalid && r.n_evicted < r.evicted.size()) r.evicted[r.n_evicted++] = line << off_bits_;
}

void CacheHierarchy::drop_private_everywhere(PAddr p) {
    u64 line = line_of(p);
    for (u32 c = 0; c < cfg_.cores; ++c) {
        if (cfg_.l1.addressing == Addressing::vivt) {
            for (u32 s = 0; s < cfg_.l1.sets; ++s) l1_[c].invalidate(s, line);
        } else {
            l1_[c].invalidate(l1_set(p, std::nullopt), line);
        }
        if (cfg_.l2) l2_[c].invalidate(l2_set(p), line);
    }
}

void CacheHierarchy::insert_llc(PAddr p, AccessResult& r) {
    u64 victim = llc_.insert(llc_set(p), line_of(p), rng_);
    if (victim == CacheArray::kInvalid) return;
    record(r, victim);
    if (cfg_.llc.inclusion == Inclusion::inclusive) drop_private_everywhere(victim << off_bits_);
}

void CacheHierarchy::fill_private(unsigned core, PAddr p, std::optional<VAddr> v, AccessResult& r) {
    u64 line = line_of(p);
    if (cfg_.l2) {
        u32 s2 = l2_set(p);
        if (l2_[core].find(s2, line) < 0) {
            u64 victim = l2_[core].insert(s2, line, rng_);
            if (victim != CacheArray::kInvalid) {
                record(r, victim);
                if (cfg_.llc.inclusion == Inclusion::exclusive) insert_llc(victim << off_bits_, r);
            }
        }
    }
    u32 s1 = l1_set(p, v);
    if (l1_[core].find(s1, line) < 0) {
        u64 victim = l1_[core].insert(s1, line, rng_);
        if (victim != CacheArray::kInvalid) {
            record(r, victim);
            if (!cfg_.l2 && cfg_.llc.inclusion == Inclusion::exclusive) insert_llc(victim << off_bits_, r);
        }
    }
}

AccessResult CacheHierarchy::access(PAddr p, unsigned core, AccessKind, std::optional<VAddr> v) {
    AccessResult r;
    const u64 line = line_of(p);
    const auto& lat = cfg_.lat;

    u32 s1 = l1_set(p, v);
    if (int w = l1_[core].find(s1, line); w >= 0) {
        l1_[core].touch(s1, w);
        r.level = HitLevel::l1;
        r.latency = lat.l1_hit;
        return r;
    }
    if (cfg_.l2) {
        u32 s2 = l2_set(p);
        if (int w = l2_[core].find(s2, line); w >= 0) {
            l2_[core].touch(s2, w);
            r.level = HitLevel::l2;
            r.latency = lat.l2_hit;
            fill_private(core, p, v, r);
            return r;
        }
    }

    u32 s3 = llc_set(p);
    if (int w = llc_.find(s3, line); w >= 0) {
        r.level = HitLevel::l3;
        r.latency = lat.l3_hit;
        if (cfg_.llc.inclusion == Inclusion::exclusive) llc_.invalidate(s3, line);
        else llc_.touch(s3, w);
        fill_private(core, p, v, r);
        maybe_prefetch(core, p);
        return r;
    }

    bool remote = false;
    if (cfg_.llc.inclusion != Inclusion::inclusive) {
        for (u32 c = 0; c < cfg_.cores && !remote; ++c) {
            if (c == core) continue;
            remote = in_private(p, c);
        }
    }
    if (remote) {
        r.level = HitLevel::remote;
        r.latency = lat.remote_core;
    } else {
        r.level = HitLevel::dram;
        r.latency = backend_ ? backend_(p) : lat.dram_base;
    }
    if (cfg_.llc.inclusion != Inclusion::exclusive) insert_llc(p, r);
    fill_private(core, p, v, r);
    maybe_prefetch(core, p);
    return r;
}

void CacheHierarchy::maybe_prefetch(unsigned core, PAddr p) {
    if (!cfg_.prefetcher.enabled) return;
    u64 line = line_of(p);
    u64 prev = last_miss_[core];
    last_miss_[core] = line;
    if (prev == ~0ull) return;
    u64 lines_per_page = kPage >> off_bits_;
    if (prev / lines_per_page != line / lines_per_page) return;
    u64 dist = prev > line ? prev - line : line - prev;
    if (dist == 0 || dist > cfg_.prefetcher.trigger_distance) return;
    u64 next = line + 1;
    if (next / lines_per_page != line / lines_per_page) return;
    PAddr np = next << off_bits_;
    if (cached(np)) return;
    AccessResult scratch;
    if (cfg_.llc.inclusion != Inclusion::exclusive) insert_llc(np, scratch);
    if (cfg_.l2) {
        u64 victim = l2_[core].insert(l2_set(np), next, rng_);
        if (victim != CacheArray::kInvalid && cfg_.llc.inclusion == Inclusion::exclusive)
            insert_llc(victim << off_bits_, scratch);
    }
}

u32 CacheHierarchy::flush(PAddr p, unsigned core) {
    bool was = cached(p);
    drop_private_everywhere(p);
    llc_.invalidate(llc_set(p), line_of(p));
    u32 lat = cfg_.lat.flush_base;
    if (was) lat += cfg_.lat.flush_hit_extra;
    if (llc_slice(p) != local_slice(core)) lat += cfg_.lat.remote_slice;
    return lat;
}

bool CacheHierarchy::in_private(PAddr p, unsigned core) const {
    u64 line = line_of(p);
    if (cfg_.l1.addressing == Addressing::vivt) {
        for (u32 s = 0; s < cfg_.l1.sets; ++s)
            if (l1_[core].find(s, line) >= 0) return true;
    } else if (l1_[core].find(l1_set(p, std::nullopt), line) >= 0) {
        return true;
    }
    return cfg_.l2 && l2_[core].find(l2_set(p), line) >= 0;
}

bool CacheHierarchy::in_llc(PAddr p) const { return llc_.find(llc_set(p), line_of(p)) >= 0; }

bool CacheHierarchy::cached(PAddr p) const {
    if (in_llc(p)) return true;
    for (u32 c = 0; c < cfg_.cores; ++c)
        if (in_private(p, c)) return true;
    return false;
}

bool CacheHierarchy::check_inclusion() const {
    if (cfg_.llc.inclusion != Inclusion::inclusive) return true;
    auto check = [&](const CacheArray& a) {
        for (u32 s = 0; s < a.total_sets(); ++s)
            for (u32 w = 0; w < a.geom().ways; ++w) {
                u64 line = a.line_at(s, w);
                if (line != CacheArray::kInvalid && !in_llc(line << off_bits_)) return false;
            }
        return true;
    };
    for (auto& a : l1_)
        if (!check(a)) return false;
    for (auto& a : l2_)
        if (!check(a)) return false;
    return true;
}

CacheHierarchy::Snapshot CacheHierarchy::snapshot(std::span<const PAddr> lines) const {
    Snapshot s{{}, rng_};
    auto add = [&](int id, const CacheArray& a, u32 set) {
        for (auto& e : s.sets)
            if (e.first == id && e.second.set == set) return;
        s.sets.emplace_back(id, a.save(set));
    };
    for (PAddr p : lines) {
        for (u32 c = 0; c < cfg_.cores; ++c) {
            if (cfg_.l1.addressing == Addressing::vivt) {
                for (u32 k = 0; k < cfg_.l1.sets; ++k) add(int(c), l1_[c], k);
            } else {
                add(int(c), l1_[c], l1_set(p, std::nullopt));
            }
            if (cfg_.l2) add(0x10000 + int(c), l2_[c], l2_set(p));
        }
        add(0x20000, llc_, llc_set(p));
    }
    return s;
}

void CacheHierarchy::restore(const Snapshot& s) {
    for (auto& [id, copy] : s.sets) {
        if (id == 0x20000) llc_.load(copy);
        else if (id >= 0x10000) l2_[id - 0x10000].load(copy);
        else l1_[id].load(copy);
    }
    rng_ = s.rng;
}

}  // namespace memsim
