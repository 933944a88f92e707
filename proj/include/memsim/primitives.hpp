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

#include <array>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "memsim/eviction.hpp"
#include "memsim/machine.hpp"

namespace memsim {

struct Histogram {
    std::map<u32, u64> bins;

    void add(u32 latency) { ++bins[latency]; }
    u64 total() const;
    u32 median() const;
    u32 min() const { return bins.empty() ? 0 : bins.begin()->first; }
    u32 max() const { return bins.empty() ? 0 : bins.rbegin()->first; }
    // latency,count,label
    void write_csv(std::ostream& os, const std::string& label) const;
};

enum class ProbeKind { flush_reload, evict_reload, flush_flush, prime_probe };
const char* to_string(ProbeKind k);
ProbeKind parse_probe(const std::string& s);

struct Calibration {
    Histogram hit, miss;
    u32 threshold = 0;
    // Flush timing: a cached line makes clflush slower.
    bool high_is_hit = false;

    bool is_hit(u32 latency) const { return high_is_hit ? latency >= threshold : latency < threshold; }
};

// Reload latency of a line cached by another core versus a flushed line.
Calibration calibrate_reload(Cpu& cpu, VAddr line, u32 samples);
// clflush latency of a cached versus an uncached line.
Calibration calibrate_flush(Cpu& cpu, VAddr line, u32 samples);
// Allocates its own scratch line.
Calibration calibrate(Cpu& cpu, ProbeKind kind, u32 samples);

struct ProbeResult {
    bool hit = false;
    u32 latency = 0;
    u32 misses = 0;  // Prime+Probe: members found evicted
};

// One monitored line. reset() establishes the "not accessed" state; check()
// measures and leaves the line reset again, so a loop needs reset() only once.
class LineMonitor {
public:
    virtual ~LineMonitor() = default;
    virtual void reset() = 0;
    virtual ProbeResult check() = 0;
    virtual ProbeKind kind() const = 0;
    virtual VAddr line() const = 0;
};

class FlushReload : public LineMonitor {
public:
    FlushReload(Cpu& cpu, VAddr v, Calibration c) : cpu_(cpu), v_(v), cal_(std::move(c)) {}
    void reset() override { cpu_.clflush(v_); }
    ProbeResult check() override;
    ProbeKind kind() const override { return ProbeKind::flush_reload; }
    VAddr line() const override { return v_; }

private:
    Cpu& cpu_;
    VAddr v_;
    Calibration cal_;
};

class EvictReload : public LineMonitor {
public:
    EvictReload(Cpu& cpu, VAddr v, EvictionSet set, EvictionStrategy s, Calibration c)
        : cpu_(cpu), v_(v), set_(std::move(set)), s_(s), cal_(std::move(c)) {}
    void reset() override { run_strategy(s_, set_, cpu_); }
    ProbeResult check() override;
    ProbeKind kind() const override { return ProbeKind::evict_reload; }
    VAddr line() const override { return v_; }

private:
    Cpu& cpu_;
    VAddr v_;
    EvictionSet set_;
    EvictionStrategy s_;
    Calibration cal_;
};

class FlushFlush : public LineMonitor {
public:
    FlushFlush(Cpu& cpu, VAddr v, Calibration c) : cpu_(cpu), v_(v), cal_(std::move(c)) {}
    void reset() override { cpu_.clflush(v_); }
    ProbeResult check() override;
    ProbeKind kind() const override { return ProbeKind::flush_flush; }
    VAddr line() const override { return v_; }

private:
    Cpu& cpu_;
    VAddr v_;
    Calibration cal_;
};

// Prime+Probe on the LLC set of `target`. Members must be congruent with it; the
// prime size may be below the associativity (random replacement). `settle` extra
// prime passes follow each probe so the set refills with our own lines.
class PrimeProbe : public LineMonitor {
public:
    PrimeProbe(Cpu& cpu, VAddr target, std::vector<VAddr> members, Calibration reload, u32 min_misses = 1,
               u32 settle = 0);
    void reset() override { prime(); }
    ProbeResult check() override { return probe(); }
    ProbeKind kind() const override { return ProbeKind::prime_probe; }
    VAddr line() const override { return target_; }

    void prime();
    // Timed walk over the members; also re-primes the set.
    ProbeResult probe();
    u32 prime_size() const { return static_cast<u32>(members_.size()); }
    void set_min_misses(u32 n) { min_misses_ = n; }

private:
    Cpu& cpu_;
    VAddr target_;
    std::vector<VAddr> members_;
    Calibration cal_;
    u32 min_misses_;
    u32 settle_;
};

// Builds monitors of one kind for arbitrary lines. Eviction-based kinds draw
// their sets from a private 2 MB-page pool.
struct MonitorFactory {
    Cpu* cpu = nullptr;
    ProbeKind kind = ProbeKind::flush_reload;
    Calibration cal{};
    VAddr pool = 0;
    u64 pool_bytes = 0;
    EvictionStrategy strategy{};
    u32 prime_size = 0;

    std::unique_ptr<LineMonitor> make(VAddr line) const;
};

MonitorFactory make_monitor_factory(Cpu& cpu, ProbeKind kind, u32 samples = 256, u64 pool_bytes = 32ull << 20);

// Coroutine probes: reset, give the scheduler `wait` turns, then measure.
Task probe_after_wait(Cpu& cpu, LineMonitor& m, u32 wait, ProbeResult& out);
Task flush_reload(Cpu& cpu, VAddr v, u32 wait, const Calibration& c, ProbeResult& out);
Task flush_flush(Cpu& cpu, VAddr v, u32 wait, const Calibration& c, ProbeResult& out);
Task evict_reload(Cpu& cpu, VAddr v, const EvictionSet& set, const EvictionStrategy& s, u32 wait,
                  const Calibration& c, ProbeResult& out);

struct EvictTimeResult {
    double mean_plain = 0;    // cycles per call, victim state warm
    double mean_evicted = 0;  // cycles per call after running the strategy
    double delta() const { return mean_evicted - mean_plain; }
};

// Times a syscall routine with and without evicting the set beforehand.
EvictTimeResult evict_time(Cpu& cpu, u32 routine, std::span<const u64> args, const EvictionSet& set,
                           const EvictionStrategy& s, u32 reps);

// ---------------------------------------------------------------- prefetch oracles

struct TranslationCalibration {
    std::array<Histogram, 6> by_depth;
    std::array<u32, 6> median{};
    std::array<bool, 6> present{};

    // Nearest calibrated median; `margin` is the distance to the runner-up.
    Depth classify(u32 latency, u32* margin = nullptr) const;
};

TranslationCalibration calibrate_translation(Cpu& cpu, u32 samples);

struct LevelProbe {
    Depth depth = Depth::pml4e_absent;
    int level = 4;  // coarse class 0..4
    u32 latency = 0;
    u32 margin = 0;
    bool ambiguous = false;
};

LevelProbe translation_level_probe(Cpu& cpu, VAddr v, const TranslationCalibration& cal);

// Observable translation structure of one PML4 slot range.
struct TranslationMap {
    std::set<unsigned> pml4;  // present top-level slots
    std::set<VAddr> pdpt;     // 1 GB regions with a present PDPT entry
    std::set<VAddr> pd;       // 2 MB regions with a present PD entry
    std::set<VAddr> large;    // 2 MB regions mapped in full (2 MB page or full PT)
    std::set<VAddr> pages;    // present 4 KB pages outside `large`
    u64 probes = 0;

    bool operator==(const TranslationMap& o) const {
        return pml4 == o.pml4 && pdpt == o.pdpt && pd == o.pd && large == o.large && pages == o.pages;
    }
};

// Breadth-first search from the top level, `per_region` prefetches per region.
TranslationMap recover_translation_levels(Cpu& cpu, const TranslationCalibration& cal, unsigned first_slot = 0,
                                          unsigned last_slot = 255, u32 per_region = 4);
// Same structure read directly from the tables.
TranslationMap translation_ground_truth(Machine& m, PAddr root, unsigned first_slot = 0, unsigned last_slot = 255);

// Flush p, prefetch p_bar, reload p.
bool address_translation_probe(Cpu& cpu, VAddr p, VAddr p_bar, const Calibration& reload, u32 repeats = 1);

struct DirectMapSearch {
    std::vector<VAddr> found;
    u64 candidates = 0;
};

// Tries every direct-map alias at the 2 MB offset of p (p must lie in a 2 MB page).
DirectMapSearch find_direct_map_alias(Cpu& cpu, VAddr p, const Calibration& reload, u32 repeats = 1);

struct EvictPrefetchResult {
    bool used = false;
    bool control_ok = false;  // the control run without the call saw an uncached line
    u32 latency = 0;
    u32 control_latency = 0;
};

// Evict p (a kernel direct-map address), run the routine, prefetch p. A mandatory
// control run omits the routine.
EvictPrefetchResult evict_prefetch(Cpu& cpu, VAddr p, u32 routine, std::span<const u64> args, const EvictionSet& set,
                                   const EvictionStrategy& s, const TranslationCalibration& cal);

// ---------------------------------------------------------------- DRAM rows

class RowMonitor {
public:
    // `mine` is attacker memory; `other` the physical address whose bank is watched.
    RowMonitor(Cpu& cpu, VAddr mine, PAddr other);
    void reset();
    // Timed uncached access to `mine`; true if another row was opened in between.
    ProbeResult check();
    u32 threshold() const { return threshold_; }

private:
    Cpu& cpu_;
    VAddr mine_;
    u32 threshold_;
};

Task dram_row_probe(Cpu& cpu, VAddr mine, PAddr other, u32 wait, ProbeResult& out);

}  // namespace memsim
