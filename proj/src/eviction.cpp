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

#include "memsim/eviction.hpp"

#include <algorithm>
#include <map>

namespace memsim {

void EvictionStrategy::validate() const {
    if (S == 0) throw SimError("bad_strategy", "S must be at least 1");
    if (C == 0) throw SimError("bad_strategy", "C must be at least 1");
    if (D == 0 || D > S) throw SimError("bad_strategy", "need 1 <= D <= S");
    if (L == 0 || L > D) throw SimError("bad_strategy", "need 1 <= L <= D");
}

std::string EvictionStrategy::name() const {
    return "P-" + std::to_string(C) + "-" + std::to_string(D) + "-" + std::to_string(L) + "-" + std::to_string(S);
}

u64 access_count(const EvictionStrategy& s) {
    s.validate();
    return u64(s.C) * s.D * ((s.S - s.D) / s.L + 1);
}

std::vector<u32> access_pattern(const EvictionStrategy& s) {
    s.validate();
    std::vector<u32> out;
    out.reserve(access_count(s));
    for (u32 i = 0; i + s.D <= s.S; i += s.L)
        for (u32 c = 0; c < s.C; ++c)
            for (u32 d = 0; d < s.D; ++d) out.push_back(i + d);
    return out;
}

std::vector<u32> canonical_pattern(const std::vector<u32>& pattern) {
    std::map<u32, u32> label;
    std::vector<u32> out;
    out.reserve(pattern.size());
    for (u32 x : pattern) {
        auto [it, fresh] = label.emplace(x, static_cast<u32>(label.size()));
        out.push_back(it->second);
    }
    return out;
}

RunStats run_pattern(const std::vector<u32>& pattern, const EvictionSet& set, Cpu& cpu) {
    RunStats st;
    for (u32 idx : pattern) {
        if (idx >= set.members.size()) throw SimError("set_too_small", "eviction set has too few members");
        auto r = cpu.read(set.members[idx]);
        ++st.accesses;
        st.cycles += r.latency;
        if (r.level <= HitLevel::l3) ++st.hits;
        else ++st.misses;
    }
    return st;
}

RunStats run_strategy(const EvictionStrategy& s, const EvictionSet& set, Cpu& cpu) {
    s.validate();
    if (set.members.size() < s.S) throw SimError("set_too_small", "eviction set smaller than S");
    return run_pattern(access_pattern(s), set, cpu);
}

namespace {

u32 midpoint(const LatencyModel& lat) { return (lat.l3_hit + lat.dram_base) / 2; }

struct TrialCounts {
    u64 evicted = 0, trials = 0, cycles = 0, hits = 0, misses = 0;
};

// Steady-state loop shared by the model-level evaluators.
TrialCounts steady_trials(CacheHierarchy& h, unsigned core, PAddr target, const std::vector<PAddr>& members,
                          const std::vector<u32>& pattern, u64 trials, u32 warmup, u32 miss_threshold) {
    TrialCounts tc;
    for (u64 t = 0; t <= warmup + trials; ++t) {
        auto probe = h.access(target, core);
        if (t > warmup) {
            ++tc.trials;
            if (probe.latency >= miss_threshold) ++tc.evicted;
        }
        if (t == warmup + trials) break;
        bool count = t >= warmup;
        for (u32 idx : pattern) {
            auto a = h.access(members[idx], core);
            if (!count) continue;
            tc.cycles += a.latency;
            if (a.level <= HitLevel::l3) ++tc.hits;
            else ++tc.misses;
        }
    }
    return tc;
}

}  // namespace

StrategyReport evaluate_strategy(const HierarchyConfig& caches, const EvictionStrategy& s, u64 trials, u64 seed) {
    s.validate();
    if (trials == 0) throw SimError("bad_trials", "need at least one trial");
    CacheHierarchy h(caches, seed);
    const u64 stride = u64(caches.llc.sets) * caches.llc.line_size;
    const PAddr target = (1ull << 30) + 0x1c0;
    const unsigned slice = h.llc_slice(target);
    std::vector<PAddr> members;
    for (u64 k = 1; members.size() < s.S; ++k)
        if (h.llc_slice(target + k * stride) == slice) members.push_back(target + k * stride);

    auto pattern = access_pattern(s);
    auto tc = steady_trials(h, 0, target, members, pattern, trials, 8, midpoint(caches.lat));
    StrategyReport r;
    r.strategy = s;
    r.trials = tc.trials;
    r.accesses = pattern.size();
    r.eviction_rate = double(tc.evicted) / double(tc.trials);
    r.mean_cycles = double(tc.cycles) / double(trials);
    r.hits = double(tc.hits) / double(trials);
    r.misses = double(tc.misses) / double(trials);
    return r;
}

bool rank_before(const StrategyReport& a, const StrategyReport& b, double threshold) {
    double ra = std::min(a.eviction_rate, threshold);
    double rb = std::min(b.eviction_rate, threshold);
    if (ra != rb) return ra > rb;
    if (a.mean_cycles != b.mean_cycles) return a.mean_cycles < b.mean_cycles;
    const auto& x = a.strategy;
    const auto& y = b.strategy;
    return std::tie(x.S, x.C, x.D, x.L) < std::tie(y.S, y.C, y.D, y.L);
}

std::vector<StrategyReport> explore(const HierarchyConfig& caches, const ExploreOptions& opt) {
    std::map<std::vector<u32>, EvictionStrategy> unique;
    for (u32 S : opt.sizes)
        for (u32 C = 1; C <= opt.max_c; ++C)
            for (u32 D = 1; D <= opt.max_d && D <= S; ++D)
                for (u32 L = 1; L <= opt.max_l && L <= D; ++L) {
                    EvictionStrategy s{C, D, L, S};
                    unique.emplace(canonical_pattern(access_pattern(s)), s);
                }
    std::vector<StrategyReport> out;
    out.reserve(unique.size());
    for (const auto& [pat, s] : unique) {
        u64 seed = mix_seed(opt.seed, (u64(s.C) << 48) | (u64(s.D) << 32) | (u64(s.L) << 16) | s.S);
        out.push_back(evaluate_strategy(caches, s, opt.trials, seed));
    }
    std::sort(out.begin(), out.end(),
              [&](const StrategyReport& a, const StrategyReport& b) { return rank_before(a, b, opt.threshold); });
    return out;
}

void write_strategy_csv(std::ostream& os, const std::vector<StrategyReport>& rows) {
    os << "C,D,L,S,Accesses,Hits,Misses,Cycles,Eviction rate\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%u,%u,%u,%u,%llu,%.2f,%.2f,%.2f,%.6f\n", r.strategy.C, r.strategy.D,
                      r.strategy.L, r.strategy.S, static_cast<unsigned long long>(r.accesses), r.hits, r.misses,
                      r.mean_cycles, r.eviction_rate);
        os << buf;
    }
}

CongruenceIndex::CongruenceIndex(Cpu& cpu, VAddr pool, u64 bytes) : caches_(&cpu.machine().caches()) {
    u32 line = caches_->config().llc.line_size;
    for (VAddr page = pool; page < pool + bytes; page += kPage) {
        auto p = cpu.phys(page);
        if (!p) throw SimError("not_mapped", "eviction pool is not mapped");
        for (u64 off = 0; off < kPage; off += line) buckets_[caches_->llc_set(*p + off)].emplace_back(page + off, *p + off);
    }
}

std::vector<VAddr> CongruenceIndex::take(PAddr p, std::size_t n) const {
    std::vector<VAddr> out;
    auto it = buckets_.find(caches_->llc_set(p));
    if (it == buckets_.end()) return out;
    u64 mask = ~u64(caches_->config().llc.line_size - 1);
    for (const auto& [v, q] : it->second) {
        if (out.size() == n) break;
        if ((q & mask) != (p & mask)) out.push_back(v);
    }
    return out;
}

std::size_t CongruenceIndex::count(PAddr p) const {
    auto it = buckets_.find(caches_->llc_set(p));
    return it == buckets_.end() ? 0 : it->second.size();
}

EvictionSet build_eviction_set_phys(Cpu& cpu, PAddr target, VAddr pool, u64 pool_bytes, u32 size) {
    const auto& caches = cpu.machine().caches();
    const u64 line_mask = ~u64(caches.config().llc.line_size - 1);
    const u32 want = caches.llc_set(target);
    EvictionSet set;
    // only lines sharing the page offset can share the set index
    for (VAddr page = pool; page < pool + pool_bytes && set.members.size() < size; page += kPage) {
        VAddr v = page + (target & (kPage - 1) & line_mask);
        auto p = cpu.phys(v);
        if (!p) throw SimError("not_mapped", "eviction pool is not mapped");
        if ((*p & line_mask) == (target & line_mask)) continue;
        if (caches.llc_set(*p) == want) set.members.push_back(v);
    }
    if (set.members.size() < size)
        throw SimError("insufficient_congruent", "pool holds " + std::to_string(set.members.size()) +
                                                     " congruent lines, need " + std::to_string(size));
    return set;
}

EvictionSet build_eviction_set_static(Cpu& cpu, VAddr target, VAddr pool, u64 pool_bytes, u32 size) {
    auto tp = cpu.phys(target);
    if (!tp) throw SimError("not_mapped", "eviction target is not mapped");
    auto set = build_eviction_set_phys(cpu, *tp, pool, pool_bytes, size);
    set.target = target;
    return set;
}

EvictionStrategy default_strategy(const CacheGeometry& llc) {
    if (llc.policy == Policy::random) return {1, 1, 1, 2 * llc.ways};
    return {1, 1, 1, llc.ways};
}

PatternEvaluator::PatternEvaluator(Cpu& cpu, VAddr target, const std::vector<VAddr>& candidates,
                                   const DynamicOptions& opt)
    : cpu_(cpu), target_(target), opt_(opt) {
    auto& caches = cpu.machine().caches();
    miss_threshold_ = opt.miss_threshold ? opt.miss_threshold : midpoint(caches.config().lat);
    std::vector<PAddr> lines;
    lines.reserve(candidates.size() + 1);
    auto tp = cpu.phys(target);
    if (!tp) throw SimError("not_mapped", "eviction target is not mapped");
    lines.push_back(*tp);
    for (VAddr v : candidates) {
        auto p = cpu.phys(v);
        if (!p) throw SimError("not_mapped", "candidate is not mapped");
        lines.push_back(*p);
    }
    snap_ = caches.snapshot(lines);
}

Evaluation PatternEvaluator::operator()(const std::vector<VAddr>& members, const std::vector<u32>& pattern) {
    ++calls_;
    auto& caches = cpu_.machine().caches();
    std::vector<PAddr> phys;
    phys.reserve(members.size());
    for (VAddr v : members) phys.push_back(*cpu_.phys(v));
    PAddr tp = *cpu_.phys(target_);

    auto saved = caches.backend();
    u32 dram = caches.config().lat.dram_base;
    caches.set_backend([dram](PAddr) { return dram; });
    caches.restore(snap_);
    caches.reseed(opt_.seed);
    auto tc = steady_trials(caches, cpu_.core(), tp, phys, pattern, std::max<u32>(1, opt_.tests_per_decision), 2,
                            miss_threshold_);
    caches.restore(snap_);
    caches.set_backend(saved);

    Evaluation e;
    e.rate = double(tc.evicted) / double(tc.trials);
    e.mean_cycles = double(tc.cycles) / double(std::max<u32>(1, opt_.tests_per_decision));
    return e;
}

namespace {

std::vector<u32> grow_pattern(u32 n) {
    if (n == 0) return {};
    return access_pattern({2, std::min<u32>(2, n), 1, n});
}

bool acceptable(const Evaluation& e, const Evaluation& cur, double threshold) {
    return e.rate >= threshold && e.mean_cycles <= cur.mean_cycles;
}

// Drops member m and renumbers the pattern.
std::vector<u32> without_member(const std::vector<u32>& pattern, u32 m) {
    std::vector<u32> out;
    for (u32 x : pattern)
        if (x != m) out.push_back(x > m ? x - 1 : x);
    return out;
}

}  // namespace

DynamicResult build_eviction_set_dynamic(Cpu& cpu, VAddr target, const std::vector<VAddr>& candidates,
                                         const DynamicOptions& opt) {
    PatternEvaluator eval(cpu, target, candidates, opt);
    DynamicResult res;
    res.set.target = target;
    auto& members = res.set.members;
    auto& pattern = res.pattern;

    Evaluation cur = eval(members, pattern);
    std::size_t budget = std::min<std::size_t>(candidates.size(), opt.candidate_budget);
    for (std::size_t i = 0; cur.rate < opt.threshold; ++i) {
        if (i >= budget)
            throw SimError("cannot_reach_threshold", "candidate budget exhausted at rate " + std::to_string(cur.rate));
        members.push_back(candidates[i]);
        pattern = grow_pattern(static_cast<u32>(members.size()));
        cur = eval(members, pattern);
    }

    for (bool changed = true; changed;) {
        changed = false;
        for (u32 m = static_cast<u32>(members.size()); m-- > 0;) {
            auto trial_members = members;
            trial_members.erase(trial_members.begin() + m);
            auto trial_pattern = without_member(pattern, m);
            auto e = eval(trial_members, trial_pattern);
            if (acceptable(e, cur, opt.threshold)) {
                members = std::move(trial_members);
                pattern = std::move(trial_pattern);
                cur = e;
                changed = true;
            }
        }
        for (std::size_t j = pattern.size(); j-- > 0;) {
            auto trial = pattern;
            trial.erase(trial.begin() + static_cast<std::ptrdiff_t>(j));
            auto e = eval(members, trial);
            if (acceptable(e, cur, opt.threshold)) {
                pattern = std::move(trial);
                cur = e;
                changed = true;
            }
        }
        // members whose accesses were all removed
        for (u32 m = static_cast<u32>(members.size()); m-- > 0;) {
            if (std::find(pattern.begin(), pattern.end(), m) != pattern.end()) continue;
            members.erase(members.begin() + m);
            pattern = without_member(pattern, m);
        }
    }
    res.rate = cur.rate;
    res.mean_cycles = cur.mean_cycles;
    res.evaluations = eval.calls();
    return res;
}

MinimalityAudit audit_minimality(Cpu& cpu, const DynamicResult& r, const std::vector<VAddr>& candidates,
                                 const DynamicOptions& opt) {
    PatternEvaluator eval(cpu, r.set.target, candidates, opt);
    Evaluation base = eval(r.set.members, r.pattern);
    MinimalityAudit a;
    auto check = [&](const Evaluation& e) {
        ++a.removals;
        if (e.rate >= opt.threshold && e.mean_cycles <= base.mean_cycles) ++a.violations;
    };
    for (u32 m = 0; m < r.set.members.size(); ++m) {
        auto members = r.set.members;
        members.erase(members.begin() + m);
        check(eval(members, without_member(r.pattern, m)));
    }
    for (std::size_t j = 0; j < r.pattern.size(); ++j) {
        auto pattern = r.pattern;
        pattern.erase(pattern.begin() + static_cast<std::ptrdiff_t>(j));
        check(eval(r.set.members, pattern));
    }
    return a;
}

}  // namespace memsim
