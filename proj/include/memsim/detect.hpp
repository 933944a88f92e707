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

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "memsim/config.hpp"
#include "memsim/covert.hpp"
#include "memsim/machine.hpp"

namespace memsim {

struct DetectorConfig {
    double k_m = 2.35;  // cache misses per ITLB event
    double k_r = 2.34;  // cache references per ITLB event
    Cycles period = 2'600'000;  // sampling window, virtual cycles

    void validate() const;
};

enum class Verdict { benign, malicious };
const char* to_string(Verdict v);

struct Classification {
    Verdict verdict = Verdict::benign;
    bool miss_trip = false;
    bool ref_trip = false;
    double misses_per_itlb = 0;
    double refs_per_itlb = 0;

    // "misses", "references", "both" or "" for benign.
    std::string trigger() const;
};

// Throws no_itlb_events when ITLB_RA + ITLB_WA is zero.
Classification classify(const PerfCounters& c, const DetectorConfig& cfg = {});

// Cumulative counter snapshots of every actor, taken by the machine's sampler.
class CounterSampler {
public:
    // Takes the first snapshot now and registers with m.set_sampler.
    CounterSampler(Machine& m, Cycles period);
    void snapshot(Cycles now);
    // Per-window deltas of one actor, including the tail since the last snapshot.
    std::vector<PerfCounters> windows(u32 actor) const;

private:
    Machine& m_;
    std::vector<std::vector<PerfCounters>> snaps_;  // [sample][actor]
};

struct WindowSummary {
    u64 windows = 0;
    u64 classified = 0;  // windows with ITLB events
    u64 flagged = 0;
};

WindowSummary classify_windows(const std::vector<PerfCounters>& windows, const DetectorConfig& cfg);

struct ActorProfile {
    std::string scenario;
    std::string actor;
    bool attack = false;
    // Counted in threshold calibration: the benign loads, the spy and the hammer.
    bool calibrate = false;
    PerfCounters counters;
    std::vector<PerfCounters> window_counters;
    Classification result;
    WindowSummary windows;
    int covert_row = -1;  // index into SuiteReport::covert
    bool sender = false;
};

struct SuiteOptions {
    u64 covert_bytes = 4096;
    std::vector<u32> packet_sizes{28, 5, 4};
    std::vector<ProbeKind> bindings{ProbeKind::flush_flush, ProbeKind::flush_reload, ProbeKind::prime_probe};
    Cycles duration = 52'000'000;  // per non-covert scenario
    u64 stress_bytes = 0;          // 0: half the L2
    u64 seed = 1;
    DetectorConfig detector{};
};

struct SuiteReport {
    std::vector<ActorProfile> actors;
    std::vector<ChannelStats> covert;  // stealth flags filled in
};

// idle, stress_c, stress_i, stress_m, fr_spy, rowhammer, then every covert binding
// and packet size with sender and receiver as separate actors.
SuiteReport evaluate_suite(const MachineConfig& cfg, const SuiteOptions& opt);

// Re-classifies every profile in place.
void reclassify(SuiteReport& r, const DetectorConfig& cfg);

struct Thresholds {
    double k_m = 0;
    double k_r = 0;
    bool separates = false;  // every calibration attack trips with no benign trip
};

// Per metric, the midpoint between the largest benign value and the smallest
// value of any calibration attack above it. A metric no attack exceeds is set
// just above the benign maximum.
Thresholds calibrate_thresholds(const std::vector<ActorProfile>& actors);

// scenario,actor,attack,references_per_itlb,misses_per_itlb,verdict,trigger,windows,flagged_windows
void write_stealth_csv(std::ostream& os, const std::vector<ActorProfile>& actors);

}  // namespace memsim
