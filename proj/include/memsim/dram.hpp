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
#include <unordered_map>
#include <vector>

#include "memsim/common.hpp"
#include "memsim/physmem.hpp"

namespace memsim {

// Each output bit is the parity of (paddr & mask).
struct DramAddressFn {
    std::vector<u64> bank;  // BA0..BA3
    std::vector<u64> rank;
    std::vector<u64> dimm;
    std::vector<u64> channel;
    unsigned row_cutoff = 18;
};

// Named rows of the published addressing-function table.
DramAddressFn dram_fn_preset(const std::string& name);
std::vector<std::string> dram_fn_presets();

u64 mask_of_bits(std::initializer_list<unsigned> bits);

struct DramLocation {
    u32 channel = 0, dimm = 0, rank = 0, bank = 0;
    u64 row = 0, column = 0;
    bool operator==(const DramLocation&) const = default;
};

struct DramTopology {
    DramAddressFn fn;
    u64 rows_per_bank = 1 << 14;
    u32 row_size = 8192;

    u32 channels() const { return 1u << fn.channel.size(); }
    u32 dimms() const { return 1u << fn.dimm.size(); }
    u32 ranks() const { return 1u << fn.rank.size(); }
    u32 banks() const { return 1u << fn.bank.size(); }
    u32 total_banks() const { return channels() * dimms() * ranks() * banks(); }
    u64 capacity() const { return u64(total_banks()) * rows_per_bank * row_size; }
};

DramLocation map_address(PAddr p, const DramAddressFn& fn);
u32 flat_bank(const DramLocation& l, const DramTopology& t);

struct RefreshConfig {
    double window_ms = 64.0;
    u32 commands = 8192;
    double multiplier = 1.0;  // 0.5 doubles the refresh rate
};

struct DramLatency {
    double row_hit = 1.0;
    double row_closed = 1.6;
    double row_conflict = 2.2;
};

enum class RowOutcome { row_hit, row_closed, row_conflict };
const char* to_string(RowOutcome o);

struct FlipEntry {
    PAddr addr = 0;  // byte holding the susceptible cell
    u8 bit = 0;
    bool one_to_zero = true;
    u64 threshold = 1;
    u32 bank = 0;
    u64 row = 0;
};

struct FlipSeed {
    double density_per_gb = 0.0;
    u64 seed = 1;
    u64 threshold_min = 200'000;
    u64 threshold_max = 1'200'000;
};

struct FlipReport {
    PAddr addr = 0;
    u8 bit = 0;
    bool one_to_zero = true;
    u32 bank = 0;
    u64 row = 0;
    Cycles time = 0;
    u64 activations = 0;  // adjacent activations in the window when it fired
    std::size_t entry = 0;
};

class Dram {
public:
    Dram(DramTopology topo, RefreshConfig refresh, DramLatency lat, u32 base_latency, double clock_ghz,
         PhysicalMemory* mem);

    const DramTopology& topology() const { return topo_; }
    DramLocation locate(PAddr p) const { return map_address(p, topo_.fn); }
    u32 bank_of(PAddr p) const { return flat_bank(locate(p), topo_); }

    struct RowAccess {
        RowOutcome kind;
        u32 latency;
    };
    RowAccess access_row(PAddr p, Cycles now);

    // Flips produced since the previous call. Counters reset lazily per row, so
    // this only drains the report queue.
    std::vector<FlipReport> refresh_tick(Cycles now);

    void set_flip_map(std::vector<FlipEntry> entries);
    void seed_flip_map(const FlipSeed& s, u64 mem_size);
    void add_flip(const FlipEntry& e);
    const std::vector<FlipEntry>& flip_map() const { return flips_; }
    const std::vector<FlipReport>& flip_log() const { return log_; }

    // Peak adjacent-activation count any refresh window of `row` has seen.
    u64 peak_adjacent(u32 bank, u64 row) const;
    u64 adjacent_now(u32 bank, u64 row, Cycles now) const;

    // First cycle after `now` at which `row` starts a new refresh window.
    Cycles next_refresh(u64 row, Cycles now) const;

    void set_refresh_multiplier(double m);
    const RefreshConfig& refresh() const { return refresh_; }
    double refresh_interval_cycles() const { return trefi_; }
    double window_cycles() const { return trefi_ * refresh_.commands; }
    u64 activations() const { return activations_; }

private:
    struct Adj {
        u64 count = 0;
        i64 window = -1;
        u64 peak = 0;
    };
    i64 window_of(u64 row, Cycles now) const;
    void bump(u32 bank, u64 row, Cycles now);
    static u64 key(u32 bank, u64 row) { return (u64(bank) << 40) | row; }

    DramTopology topo_;
    RefreshConfig refresh_;
    DramLatency lat_;
    u32 base_;
    double ghz_;
    double trefi_;
    PhysicalMemory* mem_;
    std::vector<i64> open_row_;
    std::unordered_map<u64, Adj> adj_;
    std::vector<FlipEntry> flips_;
    std::unordered_map<u64, std::vector<std::size_t>> flips_by_row_;
    std::unordered_map<std::size_t, i64> fired_window_;
    std::vector<FlipReport> log_;
    std::size_t drained_ = 0;
    u64 activations_ = 0;
};

}  // namespace memsim
