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

#include "memsim/dram.hpp"

#include <cmath>
#include <map>

namespace memsim {

u64 mask_of_bits(std::initializer_list<unsigned> bits) {
    u64 m = 0;
    for (unsigned b : bits) m |= u64(1) << b;
    return m;
}

namespace {

using B = std::initializer_list<unsigned>;

const std::map<std::string, DramAddressFn>& presets() {
    static const std::map<std::string, DramAddressFn> m = [] {
        std::map<std::string, DramAddressFn> p;
        auto mk = [](std::initializer_list<B> banks, std::initializer_list<B> ranks, std::initializer_list<B> dimms,
                     std::initializer_list<B> chans) {
            DramAddressFn f;
            for (auto& b : banks) f.bank.push_back(mask_of_bits(b));
            for (auto& b : ranks) f.rank.push_back(mask_of_bits(b));
            for (auto& b : dimms) f.dimm.push_back(mask_of_bits(b));
            for (auto& b : chans) f.channel.push_back(mask_of_bits(b));
            return f;
        };
        p["sandy_1ch_1dimm"] = mk({{13, 17}, {14, 18}, {15, 19}}, {{16}}, {}, {});
        p["sandy_2ch_1dimm"] = mk({{14, 18}, {15, 19}, {16, 20}}, {{17}}, {}, {{6}});
        p["ivy_haswell_1ch_1dimm"] = mk({{13, 17}, {14, 18}, {16, 20}}, {{15, 19}}, {}, {});
        p["ivy_haswell_1ch_2dimm"] = mk({{13, 18}, {14, 19}, {17, 21}}, {{16, 20}}, {{15}}, {});
        p["ivy_haswell_2ch_2dimm"] = mk({{14, 18}, {15, 19}, {17, 21}}, {{16, 20}}, {}, {{7, 8, 9, 12, 13, 18, 19}});
        p["skylake_2ch_4dimm"] = mk({{14, 19}, {15, 20}, {18, 22}}, {{17, 21}}, {{16}}, {{7, 8, 9, 12, 13, 18, 19}});
        p["skylake_2ch_1dimm"] =
            mk({{7, 14}, {15, 19}, {17, 21}, {18, 22}}, {{16, 20}}, {}, {{8, 9, 12, 13, 18, 19}});
        p["exynos7420"] = mk({{14}, {15}, {16}, {8, 13}}, {}, {}, {{7, 12}});
        return p;
    }();
    return m;
}

}  // namespace

DramAddressFn dram_fn_preset(const std::string& name) {
    auto it = presets().find(name);
    if (it == presets().end()) throw SimError("config", "unknown DRAM addressing preset '" + name + "'");
    return it->second;
}

std::vector<std::string> dram_fn_presets() {
    std::vector<std::string> v;
    for (auto& [k, _] : presets()) v.push_back(k);
    return v;
}

const char* to_string(RowOutcome o) {
    switch (o) {
        case RowOutcome::row_hit: return "row_hit";
        case RowOutcome::row_closed: return "row_closed";
        case RowOutcome::row_conflict: return "row_conflict";
    }
    return "?";
}

DramLocation map_address(PAddr p, const DramAddressFn& fn) {
    auto bits = [p](const std::vector<u64>& masks) {
        u32 v = 0;
        for (std::size_t k = 0; k < masks.size(); ++k) v |= parity(p & masks[k]) << k;
        return v;
    };
    DramLocation l;
    l.bank = bits(fn.bank);
    l.rank = bits(fn.rank);
    l.dimm = bits(fn.dimm);
    l.channel = bits(fn.channel);
    l.row = p >> fn.row_cutoff;
    l.column = p & ((u64(1) << fn.row_cutoff) - 1);
    return l;
}

u32 flat_bank(const DramLocation& l, const DramTopology& t) {
    return ((l.channel * t.dimms() + l.dimm) * t.ranks() + l.rank) * t.banks() + l.bank;
}

Dram::Dram(DramTopology topo, RefreshConfig refresh, DramLatency lat, u32 base_latency, double clock_ghz,
           PhysicalMemory* mem)
    : topo_(std::move(topo)), refresh_(refresh), lat_(lat), base_(base_latency), ghz_(clock_ghz), mem_(mem),
      open_row_(topo_.total_banks(), -1) {
    set_refresh_multiplier(refresh_.multiplier);
}

void Dram::set_refresh_multiplier(double m) {
    if (m <= 0) throw SimError("config", "refresh multiplier must be positive");
    refresh_.multiplier = m;
    trefi_ = refresh_.window_ms * 1e6 * ghz_ * m / refresh_.commands;
    adj_.clear();
    fired_window_.clear();
}

i64 Dram::window_of(u64 row, Cycles now) const {
    // Row r is refreshed by command (r mod commands) of every window.
    i64 q = static_cast<i64>(std::floor(static_cast<double>(now) / trefi_));
    i64 slot = static_cast<i64>(row % refresh_.commands);
    i64 k = q - slot;
    return k >= 0 ? k / refresh_.commands : -1 - (-k - 1) / static_cast<i64>(refresh_.commands);
}

Cycles Dram::next_refresh(u64 row, Cycles now) const {
    i64 q = static_cast<i64>(std::floor(static_cast<double>(now) / trefi_));
    i64 slot = static_cast<i64>(row % refresh_.commands);
    i64 n = refresh_.commands;
    i64 k = (q - slot >= 0 ? (q - slot) / n : -1 - (slot - q - 1) / n) + 1;
    return static_cast<Cycles>(std::ceil(static_cast<double>(k * n + slot) * trefi_)) + 1;
}

void Dram::bump(u32 bank, u64 row, Cycles now) {
    auto& a = adj_[key(bank, row)];
    i64 w = window_of(row, now);
    if (a.window != w) {
        a.window = w;
        a.count = 0;
    }
    ++a.count;
    if (a.count > a.peak) a.peak = a.count;
    auto it = flips_by_row_.find(key(bank, row));
    if (it == flips_by_row_.end()) return;
    for (std::size_t idx : it->second) {
        const FlipEntry& e = flips_[idx];
        if (a.count < e.threshold) continue;
        auto fw = fired_window_.find(idx);
        if (fw != fired_window_.end() && fw->second == w) continue;
        fired_window_[idx] = w;
        bool set = (mem_->read8(e.addr) >> e.bit) & 1;
        if (set != e.one_to_zero) continue;  // cell already holds the decayed value
        mem_->flip_bit(e.addr, e.bit);
        log_.push_back({e.addr, e.bit, e.one_to_zero, bank, row, now, a.count, idx});
    }
}

Dram::RowAccess Dram::access_row(PAddr p, Cycles now) {
    DramLocation l = locate(p);
    u32 b = flat_bank(l, topo_);
    i64& open = open_row_[b];
    RowAccess r;
    if (open == static_cast<i64>(l.row)) {
        r = {RowOutcome::row_hit, static_cast<u32>(std::lround(base_ * lat_.row_hit))};
        return r;
    }
    r = open < 0 ? RowAccess{RowOutcome::row_closed, static_cast<u32>(std::lround(base_ * lat_.row_closed))}
                 : RowAccess{RowOutcome::row_conflict, static_cast<u32>(std::lround(base_ * lat_.row_conflict))};
    open = static_cast<i64>(l.row);
    ++activations_;
    if (l.row > 0) bump(b, l.row - 1, now);
    if (l.row + 1 < topo_.rows_per_bank) bump(b, l.row + 1, now);
    return r;
}

std::vector<FlipReport> Dram::refresh_tick(Cycles) {
    std::vector<FlipReport> out(log_.begin() + static_cast<std::ptrdiff_t>(drained_), log_.end());
    drained_ = log_.size();
    return out;
}

void Dram::add_flip(const FlipEntry& in) {
    FlipEntry e = in;
    DramLocation l = locate(e.addr);
    e.bank = flat_bank(l, topo_);
    e.row = l.row;
    if (e.threshold == 0) throw SimError("config", "flip threshold must be positive");
    flips_by_row_[key(e.bank, e.row)].push_back(flips_.size());
    flips_.push_back(e);
}

void Dram::set_flip_map(std::vector<FlipEntry> entries) {
    flips_.clear();
    flips_by_row_.clear();
    fired_window_.clear();
    for (auto& e : entries) add_flip(e);
}

void Dram::seed_flip_map(const FlipSeed& s, u64 mem_size) {
    Rng rng(s.seed);
    u64 n = static_cast<u64>(std::llround(s.density_per_gb * static_cast<double>(mem_size) / double(1ull << 30)));
    std::vector<FlipEntry> v;
    for (u64 i = 0; i < n; ++i) {
        FlipEntry e;
        e.addr = rng.below(mem_size);
        e.bit = static_cast<u8>(rng.below(8));
        e.one_to_zero = rng.below(2) == 0;
        e.threshold = s.threshold_min + rng.below(s.threshold_max - s.threshold_min + 1);
        v.push_back(e);
    }
    set_flip_map(std::move(v));
}

u64 Dram::peak_adjacent(u32 bank, u64 row) const {
    auto it = adj_.find(key(bank, row));
    return it == adj_.end() ? 0 : it->second.peak;
}

u64 Dram::adjacent_now(u32 bank, u64 row, Cycles now) const {
    auto it = adj_.find(key(bank, row));
    if (it == adj_.end() || it->second.window != window_of(row, now)) return 0;
    return it->second.count;
}

}  // namespace memsim
