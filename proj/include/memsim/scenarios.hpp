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

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "memsim/config.hpp"
#include "memsim/eviction.hpp"

namespace memsim {

// Output of one experiment: CSV tables, a JSON summary, and the outcome of its
// built-in checks.
struct Report {
    std::string name;
    std::vector<std::pair<std::string, std::string>> tables;  // stem, CSV text
    nlohmann::json summary = nlohmann::json::object();
    std::vector<std::string> failures;

    bool ok() const { return failures.empty(); }
    void expect(bool cond, const std::string& what);
    // Tables one after another, each preceded by "# <stem>".
    std::string csv() const;
    // {"scenario", "summary", "tables": {stem: [row objects]}, "failures"}
    nlohmann::json json() const;
};

// CSV text to an array of objects; numeric cells become numbers.
nlohmann::json csv_to_json(const std::string& csv);

struct ScenarioOptions {
    u64 seed = 1;
    double noise = 0;
    u64 bytes = 4096;
    // Experiment-specific repetition counts; 0 picks the default.
    u64 trials = 0;
    u64 layouts = 0;
    u64 keys = 0;
};

// Names accepted by run_scenario.
std::vector<std::string> scenario_names();
Report run_scenario(const std::string& name, const MachineConfig& cfg, const ScenarioOptions& opt);

// explore over C, D, L <= 2 and S 16..20; the check looks for a repeated-access
// strategy ranked above the best single-pass one.
Report explore_evictions(const MachineConfig& cfg, const ScenarioOptions& opt);
Report covert_bench(const MachineConfig& cfg, const ScenarioOptions& opt);
Report template_attack(const MachineConfig& cfg, const ScenarioOptions& opt);
Report rowhammer_sweep(const MachineConfig& cfg, const ScenarioOptions& opt);
Report oracle_suite(const MachineConfig& cfg, const ScenarioOptions& opt);
Report detect_suite(const MachineConfig& cfg, const ScenarioOptions& opt);
Report dedup_demo(const MachineConfig& cfg, const ScenarioOptions& opt);

// Ranking with rates within `tol` treated as equal, so sampling noise cannot decide.
bool ranks_above(const StrategyReport& a, const StrategyReport& b, double threshold, double tol);
bool repeated_access(const EvictionStrategy& s);

struct DedupProbe {
    u32 page = 0;
    bool merged = false;  // content matched a victim page
    u32 latency = 0;
};

struct DedupResult {
    std::vector<DedupProbe> probes;
    u32 plain_latency = 0;  // median write latency on unmerged pages
    std::size_t merges = 0;
};

// The attacker fills `pages` copies of victim pages and `pages` random pages,
// waits for a scan, then times one write per page.
DedupResult dedup_attack(const MachineConfig& cfg, u32 pages, u64 seed);

struct LayoutCheck {
    bool match = false;
    u64 probes = 0;
    bool alias_unique = false;  // exactly one alias, and it is the right one
    u64 alias_candidates = 0;
    bool isolated_clean = false;  // nothing found with stronger kernel isolation
};

// A randomized user layout (4 KB pages, 2 MB pages, full page tables), recovered
// by the translation-level search and checked against the tables.
LayoutCheck check_layout(const MachineConfig& cfg, u64 seed);

}  // namespace memsim
