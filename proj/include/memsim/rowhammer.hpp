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
#include <vector>

#include "memsim/config.hpp"
#include "memsim/eviction.hpp"
#include "memsim/machine.hpp"

namespace memsim {

struct HammerPair {
    VAddr a1 = 0, a2 = 0;
    u32 bank = 0;
    u64 target_row = 0;
    bool amplified = false;  // a1, a2 in adjacent rows; target is the row beyond a2
};

// Pairs in rows r-1 and r+1 of one bank for every row r with both neighbours in the pool.
std::vector<HammerPair> select_double_sided(Cpu& cpu, VAddr pool, u64 bytes);
// Two adjacent pool rows whose outer neighbour lies outside the pool.
std::vector<HammerPair> select_amplified(Cpu& cpu, VAddr pool, u64 bytes);

enum class HammerMethod { clflush, eviction };
const char* to_string(HammerMethod m);
HammerMethod parse_hammer_method(const std::string& s);

struct HammerJob {
    HammerPair pair;
    HammerMethod method = HammerMethod::clflush;
    // Eviction method, full simulation: the loop runs the strategy over both sets.
    EvictionStrategy strategy{};
    EvictionSet set1, set2;
    u64 rounds = 0;
    Cycles duration = 0;  // when nonzero, overrides `rounds`
    // Nonzero: fixed-latency loop. Every round takes exactly this long and each
    // access reaches DRAM (eviction method: with probability `eviction_rate`).
    Cycles round_cycles = 0;
    double eviction_rate = 1.0;
    u64 seed = 1;
};

// A job with static eviction sets for both addresses drawn from `pool`.
HammerJob eviction_job(Cpu& cpu, const HammerPair& pair, VAddr pool, u64 pool_bytes, const EvictionStrategy& s);

struct HammerReport {
    u64 rounds = 0;
    Cycles cycles = 0;
    double mean_round_cycles = 0;
    u64 dram_accesses[2] = {0, 0};  // accesses of a1 and a2 that reached DRAM
    double accesses_per_window = 0;  // for a1, scaled to one refresh window
    std::vector<FlipReport> flips;
};

HammerReport hammer(Cpu& cpu, const HammerJob& job);

// Round latency of the clflush loop expressed in cycles (60 ns by default).
Cycles clflush_round_cycles(const MachineConfig& cfg, double ns = 60.0);
// window / round, in accesses per address.
double analytic_accesses_per_window(const MachineConfig& cfg, Cycles round_cycles);

// A physical address inside (bank, row).
PAddr address_in_row(const Dram& dram, u32 bank, u64 row, Rng& rng, u64 mem_size);

enum class Exploitability { none, pte_address_bit, pte_flag_bit, user_data };
const char* to_string(Exploitability e);

// `applied`: the flip is already in memory, so the live entry is recovered by undoing it.
Exploitability classify_flip(Machine& m, PAddr addr, u8 bit, bool applied = true);
inline Exploitability classify_flip(Machine& m, const FlipReport& r) { return classify_flip(m, r.addr, r.bit, true); }

struct ScanHit {
    FlipReport flip;
    Exploitability kind = Exploitability::none;
};

// Fills the region with `pattern`, hammers every double-sided pair inside it with the
// template job's method and length, and reports every byte that changed.
std::vector<ScanHit> scan_for_flips(Cpu& cpu, VAddr region, u64 bytes, const HammerJob& tmpl, u8 pattern = 0xff);

struct SweepRow {
    double multiplier = 1;
    HammerMethod method = HammerMethod::clflush;
    double eviction_rate = 1;
    Cycles round_cycles = 0;
    u64 flips = 0;
};

struct SweepOptions {
    std::vector<double> multipliers{0.25, 0.5, 0.75, 1.0, 1.5, 2.0};
    HammerMethod method = HammerMethod::clflush;
    Cycles round_cycles = 0;  // 0: the 60 ns clflush round
    double eviction_rate = 1.0;
    u32 cells = 64;  // susceptible cells in the victim row
    u64 seed = 1;
};

// Fixed pair, fixed virtual duration (two windows at the largest multiplier);
// the victim row's cells have thresholds spread around the clflush count at the
// default refresh rate.
std::vector<SweepRow> refresh_sweep(const MachineConfig& cfg, const SweepOptions& opt);
// multiplier,method,eviction_rate,round_cycles,flips
void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);

struct SoundnessAudit {
    u64 entries = 0;
    u64 met = 0;    // threshold reached inside one window
    u64 fired = 0;
    u64 violations = 0;  // met != fired
    u64 stray = 0;       // changed bytes outside seeded cells
};

// Seeds `flips` cells around hammered rows with thresholds on both sides of the
// achieved count, hammers, and checks flips happen exactly where thresholds were met.
SoundnessAudit soundness_audit(const MachineConfig& cfg, u64 flips = 1000, u64 seed = 1);

struct SprayResult {
    u64 user_frames = 0;
    u64 table_frames = 0;
    double analytic_ratio = 0;  // table / (table + user)
    u64 flips = 0;
    u64 pte_hits = 0;  // pte_address_bit or pte_flag_bit
    u64 pte_address_hits = 0;
    double pte_fraction() const { return flips ? double(pte_hits) / double(flips) : 0.0; }
};

// Maps `mappings` small pages, `pages_per_table` per page table, then classifies
// `flips` uniformly seeded cells over the frames the spray allocated.
SprayResult spray_scenario(const MachineConfig& cfg, u64 mappings, u32 pages_per_table, u64 flips, u64 seed = 1);

}  // namespace memsim
