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

#include "memsim/rowhammer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>

namespace memsim {

namespace {

PAddr phys_or_throw(Cpu& cpu, VAddr v) {
    auto p = cpu.phys(v);
    if (!p) throw SimError("not_mapped", "hammer address is not mapped");
    return *p;
}

// (bank, row) -> first pool address in it
std::map<std::pair<u32, u64>, VAddr> row_index(Cpu& cpu, VAddr pool, u64 bytes) {
    const Dram& d = cpu.machine().dram();
    u32 line = cpu.machine().config().caches.llc.line_size;
    std::map<std::pair<u32, u64>, VAddr> rows;
    for (VAddr page = pool; page < pool + bytes; page += kPage) {
        PAddr p = phys_or_throw(cpu, page);
        for (u64 off = 0; off < kPage; off += line) {
            DramLocation l = d.locate(p + off);
            rows.try_emplace({flat_bank(l, d.topology()), l.row}, page + off);
        }
    }
    return rows;
}

}  // namespace

std::vector<HammerPair> select_double_sided(Cpu& cpu, VAddr pool, u64 bytes) {
    auto rows = row_index(cpu, pool, bytes);
    std::vector<HammerPair> out;
    for (const auto& [key, v] : rows) {
        auto [bank, row] = key;
        if (row == 0) continue;
        auto lo = rows.find({bank, row - 1});
        auto hi = rows.find({bank, row + 1});
        if (lo == rows.end() || hi == rows.end()) continue;
        out.push_back({lo->second, hi->second, bank, row, false});
    }
    if (out.empty()) throw SimError("no_pair_found", "pool holds no row with both neighbours");
    return out;
}

std::vector<HammerPair> select_amplified(Cpu& cpu, VAddr pool, u64 bytes) {
    auto rows = row_index(cpu, pool, bytes);
    u64 limit = cpu.machine().dram().topology().rows_per_bank;
    std::vector<HammerPair> out;
    for (const auto& [key, v] : rows) {
        auto [bank, row] = key;
        auto next = rows.find({bank, row + 1});
        if (next == rows.end()) continue;
        if (row + 2 < limit && !rows.count({bank, row + 2})) out.push_back({v, next->second, bank, row + 2, true});
        if (row > 0 && !rows.count({bank, row - 1})) out.push_back({next->second, v, bank, row - 1, true});
    }
    if (out.empty()) throw SimError("no_pair_found", "pool has no adjacent rows at a region edge");
    return out;
}

const char* to_string(HammerMethod m) { return m == HammerMethod::clflush ? "clflush" : "eviction"; }

HammerMethod parse_hammer_method(const std::string& s) {
    if (s == "clflush") return HammerMethod::clflush;
    if (s == "eviction") return HammerMethod::eviction;
    throw SimError("config", "unknown hammer method '" + s + "'");
}

HammerJob eviction_job(Cpu& cpu, const HammerPair& pair, VAddr pool, u64 pool_bytes, const EvictionStrategy& s) {
    HammerJob j;
    j.pair = pair;
    j.method = HammerMethod::eviction;
    j.strategy = s;
    j.set1 = build_eviction_set_static(cpu, pair.a1, pool, pool_bytes, s.S);
    j.set2 = build_eviction_set_static(cpu, pair.a2, pool, pool_bytes, s.S);
    return j;
}

HammerReport hammer(Cpu& cpu, const HammerJob& job) {
    Machine& m = cpu.machine();
    Dram& d = m.dram();
    HammerReport rep;
    Cycles start = m.now();
    auto more = [&] { return job.duration ? m.now() - start < job.duration : rep.rounds < job.rounds; };

    if (job.round_cycles) {
        PAddr p1 = phys_or_throw(cpu, job.pair.a1);
        PAddr p2 = phys_or_throw(cpu, job.pair.a2);
        bool evict = job.method == HammerMethod::eviction;
        Rng rng(job.seed);
        while (more()) {
            Cycles t = m.now();
            if (!evict || rng.chance(job.eviction_rate)) {
                d.access_row(p1, t);
                ++rep.dram_accesses[0];
            }
            if (!evict || rng.chance(job.eviction_rate)) {
                d.access_row(p2, t);
                ++rep.dram_accesses[1];
            }
            m.advance(job.round_cycles);
            ++rep.rounds;
        }
    } else {
        if (job.method == HammerMethod::eviction && (job.set1.members.empty() || job.set2.members.empty()))
            throw SimError("config", "eviction hammering needs eviction sets");
        while (more()) {
            if (cpu.read(job.pair.a1).level == HitLevel::dram) ++rep.dram_accesses[0];
            if (cpu.read(job.pair.a2).level == HitLevel::dram) ++rep.dram_accesses[1];
            if (job.method == HammerMethod::clflush) {
                cpu.clflush(job.pair.a1);
                cpu.clflush(job.pair.a2);
            } else {
                run_strategy(job.strategy, job.set1, cpu);
                run_strategy(job.strategy, job.set2, cpu);
            }
            ++rep.rounds;
        }
    }
    rep.cycles = m.now() - start;
    rep.mean_round_cycles = rep.rounds ? double(rep.cycles) / double(rep.rounds) : 0.0;
    rep.accesses_per_window = rep.cycles ? double(rep.dram_accesses[0]) * d.window_cycles() / double(rep.cycles) : 0.0;
    rep.flips = d.refresh_tick(m.now());
    return rep;
}

Cycles clflush_round_cycles(const MachineConfig& cfg, double ns) { return std::max<Cycles>(1, cfg.ns_to_cycles(ns)); }

double analytic_accesses_per_window(const MachineConfig& cfg, Cycles round_cycles) {
    double window = cfg.refresh.window_ms * 1e6 * cfg.clock_ghz * cfg.refresh.multiplier;
    return window / double(round_cycles);
}

PAddr address_in_row(const Dram& dram, u32 bank, u64 row, Rng& rng, u64 mem_size) {
    unsigned cut = dram.topology().fn.row_cutoff;
    PAddr base = row << cut;
    u64 span = 1ull << cut;
    if (base + span > mem_size) throw SimError("bad_paddr", "row lies outside physical memory");
    for (int tries = 0; tries < 100000; ++tries) {
        PAddr p = base + rng.below(span);
        if (dram.bank_of(p) == bank) return p;
    }
    throw SimError("no_pair_found", "bank does not occur in row");
}

const char* to_string(Exploitability e) {
    switch (e) {
        case Exploitability::none: return "none";
        case Exploitability::pte_address_bit: return "pte_address_bit";
        case Exploitability::pte_flag_bit: return "pte_flag_bit";
        case Exploitability::user_data: return "user_data";
    }
    return "?";
}

Exploitability classify_flip(Machine& m, PAddr addr, u8 bit, bool applied) {
    u64 pfn = addr / kPage;
    switch (m.os().use_of(pfn)) {
        case FrameUse::table: {
            unsigned pos = unsigned(addr % 8) * 8 + bit;
            u64 entry = m.mem().read64(addr & ~u64(7));
            if (applied) entry ^= 1ull << pos;
            bool live = entry & pte::present;
            return live && pos >= 12 && pos <= 51 ? Exploitability::pte_address_bit : Exploitability::pte_flag_bit;
        }
        case FrameUse::user:
        case FrameUse::user_huge: return Exploitability::user_data;
        default: return Exploitability::none;
    }
}

std::vector<ScanHit> scan_for_flips(Cpu& cpu, VAddr region, u64 bytes, const HammerJob& tmpl, u8 pattern) {
    Machine& m = cpu.machine();
    std::vector<u64> pfns;
    for (VAddr v = region; v < region + bytes; v += kPage) {
        pfns.push_back(phys_or_throw(cpu, v) / kPage);
        m.mem().fill_frame(pfns.back(), pattern);
    }
    for (const auto& pair : select_double_sided(cpu, region, bytes)) {
        HammerJob job = tmpl;
        job.pair = pair;
        if (job.method == HammerMethod::eviction && !job.round_cycles) {
            job.set1 = build_eviction_set_static(cpu, pair.a1, region, bytes, job.strategy.S);
            job.set2 = build_eviction_set_static(cpu, pair.a2, region, bytes, job.strategy.S);
        }
        hammer(cpu, job);
    }
    std::vector<ScanHit> out;
    const Dram& d = m.dram();
    for (u64 pfn : pfns) {
        const auto* f = m.mem().find(pfn);
        for (u64 off = 0; off < kPage; ++off) {
            u8 now = f ? (*f)[off] : 0;
            u8 diff = now ^ pattern;
            for (u8 bit = 0; bit < 8; ++bit) {
                if (!((diff >> bit) & 1)) continue;
                ScanHit h;
                h.flip.addr = pfn * kPage + off;
                h.flip.bit = bit;
                h.flip.one_to_zero = (pattern >> bit) & 1;
                DramLocation l = d.locate(h.flip.addr);
                h.flip.bank = flat_bank(l, d.topology());
                h.flip.row = l.row;
                h.flip.time = m.now();
                h.kind = classify_flip(m, h.flip);
                out.push_back(h);
            }
        }
    }
    return out;
}

namespace {

MachineConfig without_flips(MachineConfig cfg) {
    cfg.flips.density_per_gb = 0;
    return cfg;
}

// Makes the cell hold the value the fault decays from.
void arm(PhysicalMemory& mem, const FlipEntry& e) {
    u8 v = mem.read8(e.addr);
    u8 bit = static_cast<u8>(1u << e.bit);
    mem.write8(e.addr, e.one_to_zero ? (v | bit) : (v & ~bit));
}

}  // namespace

std::vector<SweepRow> refresh_sweep(const MachineConfig& cfg, const SweepOptions& opt) {
    Cycles round = opt.round_cycles ? opt.round_cycles : clflush_round_cycles(cfg);
    double rate = opt.method == HammerMethod::eviction ? opt.eviction_rate : 1.0;
    // Thresholds follow the clflush loop at the default refresh rate, so slower
    // methods see the same cells.
    MachineConfig base = cfg;
    base.refresh.multiplier = 1.0;
    double a1 = 2.0 * analytic_accesses_per_window(base, clflush_round_cycles(cfg));
    std::vector<SweepRow> out;
    for (double mult : opt.multipliers) {
        MachineConfig c = without_flips(cfg);
        c.refresh.multiplier = mult;
        Machine m(c);
        Cpu& cpu = m.spawn("hammer", ActorKind::attacker, 0);
        VAddr pool = m.os().mmap(cpu.space(), 2 * kPage2M, PageSize::m2);
        auto pairs = select_double_sided(cpu, pool, 2 * kPage2M);
        const HammerPair& pair = pairs[pairs.size() / 2];

        Rng rng(mix_seed(opt.seed, 31));
        for (u32 i = 0; i < opt.cells; ++i) {
            FlipEntry e;
            e.addr = address_in_row(m.dram(), pair.bank, pair.target_row, rng, c.phys_mem);
            e.bit = static_cast<u8>(rng.below(8));
            e.one_to_zero = rng.below(2) == 0;
            e.threshold = static_cast<u64>(a1 * 0.04 * std::pow(60.0, rng.uniform())) + 1;  // log-uniform, 0.04..2.4
            m.dram().add_flip(e);
        }
        for (const auto& e : m.dram().flip_map()) arm(m.mem(), e);

        // One full refresh window of the victim row, as any longer run would
        // see the same per-window count again.
        Cycles begin = m.dram().next_refresh(pair.target_row, m.now());
        m.advance(begin - m.now());
        HammerJob job;
        job.pair = pair;
        job.method = opt.method;
        job.round_cycles = round;
        job.eviction_rate = rate;
        job.duration = static_cast<Cycles>(m.dram().window_cycles());
        job.seed = mix_seed(opt.seed, 32);
        hammer(cpu, job);
        std::set<std::size_t> cells;
        for (const auto& f : m.dram().flip_log()) cells.insert(f.entry);
        out.push_back({mult, opt.method, rate, round, cells.size()});
    }
    return out;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
    os << "multiplier,method,eviction_rate,round_cycles,flips\n";
    for (const auto& r : rows)
        os << r.multiplier << ',' << to_string(r.method) << ',' << r.eviction_rate << ',' << r.round_cycles << ','
           << r.flips << '\n';
}

SoundnessAudit soundness_audit(const MachineConfig& cfg, u64 flips, u64 seed) {
    constexpr u64 kPerRow = 20;
    constexpr u64 kRounds = 5000;
    MachineConfig c = without_flips(cfg);
    Machine m(c);
    Cpu& cpu = m.spawn("hammer", ActorKind::attacker, 0);
    u64 bytes = 8 * kPage2M;
    VAddr pool = m.os().mmap(cpu.space(), bytes, PageSize::m2);
    std::vector<u64> pfns;
    for (VAddr v = pool; v < pool + bytes; v += kPage) {
        pfns.push_back(*cpu.phys(v) / kPage);
        m.mem().fill_frame(pfns.back(), 0x5a);
    }
    auto pairs = select_double_sided(cpu, pool, bytes);
    Rng rng(mix_seed(seed, 41));
    rng.shuffle(pairs);
    u64 nrows = std::min<u64>(pairs.size(), (flips + kPerRow - 1) / kPerRow);
    pairs.resize(nrows);

    std::set<std::pair<PAddr, u8>> seen;
    u64 seeded = 0;
    for (u64 i = 0; seeded < flips; ++i) {
        const HammerPair& pr = pairs[i % nrows];
        FlipEntry e;
        e.addr = address_in_row(m.dram(), pr.bank, pr.target_row, rng, c.phys_mem);
        e.bit = static_cast<u8>(rng.below(8));
        if (!seen.insert({e.addr, e.bit}).second) continue;
        e.one_to_zero = rng.below(2) == 0;
        e.threshold = 1 + rng.below(4 * kRounds);
        m.dram().add_flip(e);
        ++seeded;
    }
    for (const auto& e : m.dram().flip_map()) arm(m.mem(), e);
    // expected memory image: the armed pattern with fired cells toggled
    std::map<u64, PhysicalMemory::Frame> expect;
    for (u64 pfn : pfns) {
        const auto* f = m.mem().find(pfn);
        expect[pfn] = f ? *f : PhysicalMemory::Frame{};
    }

    for (const auto& pr : pairs) {
        HammerJob job;
        job.pair = pr;
        job.rounds = kRounds;
        job.round_cycles = clflush_round_cycles(c);
        hammer(cpu, job);
    }

    SoundnessAudit a;
    std::set<std::size_t> fired;
    for (const auto& f : m.dram().flip_log()) fired.insert(f.entry);
    const auto& map = m.dram().flip_map();
    for (std::size_t i = 0; i < map.size(); ++i) {
        const auto& e = map[i];
        bool met = m.dram().peak_adjacent(e.bank, e.row) >= e.threshold;
        bool f = fired.count(i) > 0;
        ++a.entries;
        a.met += met;
        a.fired += f;
        a.violations += met != f;
        if (f) expect[e.addr / kPage][e.addr % kPage] ^= static_cast<u8>(1u << e.bit);
    }
    for (const auto& [pfn, img] : expect) {
        const auto* f = m.mem().find(pfn);
        for (u64 off = 0; off < kPage; ++off) a.stray += (f ? (*f)[off] : 0) != img[off];
    }
    return a;
}

SprayResult spray_scenario(const MachineConfig& cfg, u64 mappings, u32 pages_per_table, u64 flips, u64 seed) {
    if (pages_per_table == 0 || pages_per_table > 512) throw SimError("config", "pages per table must be in 1..512");
    Machine m(without_flips(cfg));
    Cpu& cpu = m.spawn("spray", ActorKind::attacker, 0);
    Os& os = m.os();
    u64 frames = m.mem().frames();
    std::vector<FrameUse> before(frames);
    for (u64 p = 0; p < frames; ++p) before[p] = os.use_of(p);

    VAddr base = 0x0000300000000000ull;
    for (u64 i = 0; i < mappings; ++i) {
        VAddr v = base + (i / pages_per_table) * kPage2M + (i % pages_per_table) * kPage;
        os.map_at(cpu.space(), v, os.alloc_frame(FrameUse::user), PageSize::k4, pte::user | pte::writable);
    }

    SprayResult r;
    std::vector<u64> ledger;
    for (u64 p = 0; p < frames; ++p) {
        if (before[p] != FrameUse::free) continue;
        FrameUse u = os.use_of(p);
        if (u == FrameUse::table) ++r.table_frames;
        else if (u == FrameUse::user) ++r.user_frames;
        else continue;
        ledger.push_back(p);
    }
    if (ledger.empty()) return r;
    r.analytic_ratio = double(r.table_frames) / double(ledger.size());

    Rng rng(mix_seed(seed, 51));
    for (u64 i = 0; i < flips; ++i) {
        u64 pfn = ledger[rng.below(ledger.size())];
        PAddr addr = pfn * kPage + rng.below(kPage);
        u8 bit = static_cast<u8>(rng.below(8));
        auto k = classify_flip(m, addr, bit, false);
        ++r.flips;
        if (k == Exploitability::pte_address_bit || k == Exploitability::pte_flag_bit) ++r.pte_hits;
        if (k == Exploitability::pte_address_bit) ++r.pte_address_hits;
    }
    return r;
}

}  // namespace memsim
