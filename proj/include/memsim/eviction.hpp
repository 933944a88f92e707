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

#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "memsim/config.hpp"
#include "memsim/machine.hpp"

namespace memsim {

// P-C-D-L-S: S set size, C accesses per address per round, D addresses per round,
// L loop step.
struct EvictionStrategy {
    u32 C = 1, D = 1, L = 1, S = 1;

    void validate() const;
    std::string name() const;
    bool operator==(const EvictionStrategy&) const = default;
};

// Number of accesses the eviction loop performs.
u64 access_count(const EvictionStrategy& s);
// Member indices in the exact order the eviction loop touches them.
std::vector<u32> access_pattern(const EvictionStrategy& s);
// Relabels indices by first appearance; equal results mean equivalent strategies.
std::vector<u32> canonical_pattern(const std::vector<u32>& pattern);

struct EvictionSet {
    VAddr target = 0;
    std::vector<VAddr> members;
};

struct RunStats {
    u64 accesses = 0;
    Cycles cycles = 0;
    u64 hits = 0;    // served by a cache
    u64 misses = 0;  // served by DRAM or a remote core
};

RunStats run_strategy(const EvictionStrategy& s, const EvictionSet& set, Cpu& cpu);
// Runs an explicit index sequence over the set members.
RunStats run_pattern(const std::vector<u32>& pattern, const EvictionSet& set, Cpu& cpu);

struct StrategyReport {
    EvictionStrategy strategy{};
    double eviction_rate = 0;
    double mean_cycles = 0;  // per eviction run
    double hits = 0;         // per eviction run
    double misses = 0;       // per eviction run
    u64 accesses = 0;
    u64 trials = 0;
};

// Steady-state trials on a private copy of the hierarchy: reload the target (timed
// against the hit/miss midpoint), then run the strategy. The reload of trial t+1
// is the probe of trial t.
StrategyReport evaluate_strategy(const HierarchyConfig& caches, const EvictionStrategy& s, u64 trials, u64 seed);

struct ExploreOptions {
    u32 max_c = 6, max_d = 6, max_l = 6;
    std::vector<u32> sizes{16, 17, 18, 19, 20};
    u64 trials = 100'000;
    double threshold = 0.9975;
    u64 seed = 1;
};

// All (C,D,L,S) combinations, equivalent patterns evaluated once, ranked by
// (min(rate, threshold) desc, cycles asc, S asc).
std::vector<StrategyReport> explore(const HierarchyConfig& caches, const ExploreOptions& opt);
bool rank_before(const StrategyReport& a, const StrategyReport& b, double threshold);
void write_strategy_csv(std::ostream& os, const std::vector<StrategyReport>& rows);

// Physical lines of a pool bucketed by LLC set and slice.
class CongruenceIndex {
public:
    CongruenceIndex(Cpu& cpu, VAddr pool, u64 bytes);
    // Up to n pool addresses congruent with `p`, excluding the line of p itself.
    std::vector<VAddr> take(PAddr p, std::size_t n) const;
    std::size_t count(PAddr p) const;

private:
    const CacheHierarchy* caches_;
    std::unordered_map<u32, std::vector<std::pair<VAddr, PAddr>>> buckets_;
};

// Requires physical-address knowledge of the pool.
EvictionSet build_eviction_set_static(Cpu& cpu, VAddr target, VAddr pool, u64 pool_bytes, u32 size);
// Same, for a line known only by its physical address (e.g. a kernel page).
EvictionSet build_eviction_set_phys(Cpu& cpu, PAddr target, VAddr pool, u64 pool_bytes, u32 size);

// A strategy that evicts reliably on the given LLC in the steady state.
EvictionStrategy default_strategy(const CacheGeometry& llc);

struct DynamicOptions {
    double threshold = 1.0;
    u32 tests_per_decision = 16;
    u32 candidate_budget = 1024;
    u32 miss_threshold = 0;  // cycles; 0 = midpoint of L3 hit and DRAM latency
    u64 seed = 7;
};

struct DynamicResult {
    EvictionSet set;
    std::vector<u32> pattern;  // indices into set.members
    double rate = 0;
    double mean_cycles = 0;
    u64 evaluations = 0;
};

// Timing-only construction: grow, drop members, drop accesses. Evaluations restore
// the cache state and rng so identical inputs give identical verdicts.
DynamicResult build_eviction_set_dynamic(Cpu& cpu, VAddr target, const std::vector<VAddr>& candidates,
                                         const DynamicOptions& opt);

struct MinimalityAudit {
    u64 removals = 0;
    u64 violations = 0;  // removals that kept the rate and did not slow the set down
};

// Tries every single member removal and every single access removal on a fresh
// evaluator; each must drop below the threshold or raise the latency.
MinimalityAudit audit_minimality(Cpu& cpu, const DynamicResult& r, const std::vector<VAddr>& candidates,
                                 const DynamicOptions& opt);

struct Evaluation {
    double rate = 0;
    double mean_cycles = 0;
};

// Deterministic evaluator used by the dynamic builder; exposed for the minimality audit.
class PatternEvaluator {
public:
    PatternEvaluator(Cpu& cpu, VAddr target, const std::vector<VAddr>& candidates, const DynamicOptions& opt);
    Evaluation operator()(const std::vector<VAddr>& members, const std::vector<u32>& pattern);
    u64 calls() const { return calls_; }

private:
    Cpu& cpu_;
    VAddr target_;
    DynamicOptions opt_;
    u32 miss_threshold_;
    CacheHierarchy::Snapshot snap_;
    u64 calls_ = 0;
};

}  // namespace memsim
