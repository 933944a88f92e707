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

#include "memsim/primitives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace memsim {

u64 Histogram::total() const {
    u64 n = 0;
    for (const auto& [lat, c] : bins) n += c;
    return n;
}

u32 Histogram::median() const {
    u64 n = total();
    if (n == 0) return 0;
    u64 half = (n + 1) / 2;
    u64 seen = 0;
    for (const auto& [lat, c] : bins) {
        seen += c;
        if (seen >= half) return lat;
    }
    return bins.rbegin()->first;
}

void Histogram::write_csv(std::ostream& os, const std::string& label) const {
    for (const auto& [lat, c] : bins) os << lat << ',' << c << ',' << label << '\n';
}

const char* to_string(ProbeKind k) {
    switch (k) {
        case ProbeKind::flush_reload: return "flush_reload";
        case ProbeKind::evict_reload: return "evict_reload";
        case ProbeKind::flush_flush: return "flush_flush";
        case ProbeKind::prime_probe: return "prime_probe";
    }
    return "?";
}

ProbeKind parse_probe(const std::string& s) {
    if (s == "flush_reload" || s == "fr") return ProbeKind::flush_reload;
    if (s == "evict_reload" || s == "er") return ProbeKind::evict_reload;
    if (s == "flush_flush" || s == "ff") return ProbeKind::flush_flush;
    if (s == "prime_probe" || s == "pp") return ProbeKind::prime_probe;
    throw SimError("config", "unknown probe kind '" + s + "'");
}

namespace {

unsigned other_core(Cpu& cpu) {
    unsigned cores = cpu.machine().config().caches.cores;
    return cores > 1 ? (cpu.core() + 1) % cores : cpu.core();
}

PAddr phys_or_throw(const Cpu& cpu, VAddr v) {
    auto p = cpu.phys(v);
    if (!p) throw SimError("not_mapped", "address is not mapped");
    return *p;
}

void finish(Calibration& c) {
    u32 h = c.hit.median();
    u32 m = c.miss.median();
    if (h == m) throw SimError("indistinguishable_distributions", "hit and miss medians coincide");
    if ((h > m) != c.high_is_hit)
        throw SimError("indistinguishable_distributions", "hit and miss medians are in the wrong order");
    c.threshold = (h + m + 1) / 2;
}

}  // namespace

Calibration calibrate_reload(Cpu& cpu, VAddr line, u32 samples) {
    if (samples == 0) throw SimError("bad_samples", "need at least one sample");
    Calibration c;
    PAddr p = phys_or_throw(cpu, line);
    auto& caches = cpu.machine().caches();
    unsigned helper = other_core(cpu);
    for (u32 i = 0; i < samples; ++i) {
        cpu.clflush(line);
        caches.access(p, helper);
        c.hit.add(cpu.read(line).latency);
        cpu.clflush(line);
        c.miss.add(cpu.read(line).latency);
    }
    finish(c);
    return c;
}

Calibration calibrate_flush(Cpu& cpu, VAddr line, u32 samples) {
    if (samples == 0) throw SimError("bad_samples", "need at least one sample");
    Calibration c;
    c.high_is_hit = true;
    PAddr p = phys_or_throw(cpu, line);
    auto& caches = cpu.machine().caches();
    unsigned helper = other_core(cpu);
    for (u32 i = 0; i < samples; ++i) {
        caches.access(p, helper);
        c.hit.add(cpu.clflush(line));
        c.miss.add(cpu.clflush(line));
    }
    finish(c);
    return c;
}

Calibration calibrate(Cpu& cpu, ProbeKind kind, u32 samples) {
    VAddr scratch = cpu.machine().os().mmap(cpu.space(), kPage, PageSize::k4, pte::user | pte::writable, false);
    cpu.write(scratch, 1);
    if (kind == ProbeKind::flush_flush) return calibrate_flush(cpu, scratch, samples);
    return calibrate_reload(cpu, scratch, samples);
}

ProbeResult FlushReload::check() {
    ProbeResult r;
    r.latency = cpu_.read(v_).latency;
    r.hit = cal_.is_hit(r.latency);
    cpu_.clflush(v_);
    return r;
}

ProbeResult EvictReload::check() {
    ProbeResult r;
    r.latency = cpu_.read(v_).latency;
    r.hit = cal_.is_hit(r.latency);
    run_strategy(s_, set_, cpu_);
    return r;
}

ProbeResult FlushFlush::check() {
    ProbeResult r;
    r.latency = cpu_.clflush(v_);
    r.hit = cal_.is_hit(r.latency);
    return r;
}

PrimeProbe::PrimeProbe(Cpu& cpu, VAddr target, std::vector<VAddr> members, Calibration reload, u32 min_misses,
                       u32 settle)
    : cpu_(cpu), target_(target), members_(std::move(members)), cal_(std::move(reload)), min_misses_(min_misses),
      settle_(settle) {
    if (members_.empty()) throw SimError("set_too_small", "prime set is empty");
}

void PrimeProbe::prime() {
    for (VAddr m : members_) cpu_.read(m);
}

ProbeResult PrimeProbe::probe() {
    ProbeResult r;
    for (VAddr m : members_) {
        u32 lat = cpu_.read(m).latency;
        r.latency += lat;
        if (!cal_.is_hit(lat)) ++r.misses;
    }
    r.hit = r.misses >= min_misses_;
    for (u32 i = 0; i < settle_; ++i) prime();
    return r;
}

std::unique_ptr<LineMonitor> MonitorFactory::make(VAddr line) const {
    switch (kind) {
        case ProbeKind::flush_reload: return std::make_unique<FlushReload>(*cpu, line, cal);
        case ProbeKind::flush_flush: return std::make_unique<FlushFlush>(*cpu, line, cal);
        case ProbeKind::evict_reload: {
            auto set = build_eviction_set_static(*cpu, line, pool, pool_bytes, strategy.S);
            return std::make_unique<EvictReload>(*cpu, line, std::move(set), strategy, cal);
        }
        case ProbeKind::prime_probe: {
            auto set = build_eviction_set_static(*cpu, line, pool, pool_bytes, prime_size);
            return std::make_unique<PrimeProbe>(*cpu, line, std::move(set.members), cal);
        }
    }
    throw SimError("config", "unknown probe kind");
}

MonitorFactory make_monitor_factory(Cpu& cpu, ProbeKind kind, u32 samples, u64 pool_bytes) {
    MonitorFactory f;
    f.cpu = &cpu;
    f.kind = kind;
    f.cal = calibrate(cpu, kind, samples);
    if (kind == ProbeKind::evict_reload || kind == ProbeKind::prime_probe) {
        const auto& llc = cpu.machine().config().caches.llc;
        f.pool_bytes = pool_bytes;
        f.pool = cpu.machine().os().mmap(cpu.space(), pool_bytes, PageSize::m2);
        f.strategy = default_strategy(llc);
        f.prime_size = llc.policy == Policy::random ? llc.ways - 1 : llc.ways;
    }
    return f;
}

Task probe_after_wait(Cpu& cpu, LineMonitor& m, u32 wait, ProbeResult& out) {
    m.reset();
    for (u32 i = 0; i < wait; ++i) co_await cpu.yield();
    out = m.check();
}

Task flush_reload(Cpu& cpu, VAddr v, u32 wait, const Calibration& c, ProbeResult& out) {
    FlushReload m(cpu, v, c);
    co_await probe_after_wait(cpu, m, wait, out);
}

Task flush_flush(Cpu& cpu, VAddr v, u32 wait, const Calibration& c, ProbeResult& out) {
    FlushFlush m(cpu, v, c);
    co_await probe_after_wait(cpu, m, wait, out);
}

Task evict_reload(Cpu& cpu, VAddr v, const EvictionSet& set, const EvictionStrategy& s, u32 wait,
                  const Calibration& c, ProbeResult& out) {
    EvictReload m(cpu, v, set, s, c);
    co_await probe_after_wait(cpu, m, wait, out);
}

EvictTimeResult evict_time(Cpu& cpu, u32 routine, std::span<const u64> args, const EvictionSet& set,
                           const EvictionStrategy& s, u32 reps) {
    if (reps == 0) throw SimError("bad_samples", "need at least one repetition");
    EvictTimeResult r;
    auto timed = [&] {
        Cycles t0 = cpu.rdtsc();
        cpu.syscall(routine, args);
        return cpu.rdtsc() - t0;
    };
    cpu.syscall(routine, args);
    double plain = 0, evicted = 0;
    for (u32 i = 0; i < reps; ++i) plain += double(timed());
    for (u32 i = 0; i < reps; ++i) {
        run_strategy(s, set, cpu);
        evicted += double(timed());
    }
    r.mean_plain = plain / reps;
    r.mean_evicted = evicted / reps;
    return r;
}

// ---------------------------------------------------------------- prefetch oracles

Depth TranslationCalibration::classify(u32 latency, u32* margin) const {
    u32 best = std::numeric_limits<u32>::max(), second = best;
    int arg = 5;
    for (int d = 0; d < 6; ++d) {
        if (!present[d]) continue;
        u32 dist = latency > median[d] ? latency - median[d] : median[d] - latency;
        if (dist < best) {
            second = best;
            best = dist;
            arg = d;
        } else if (dist < second) {
            second = dist;
        }
    }
    if (margin) *margin = second == std::numeric_limits<u32>::max() ? second : second - best;
    return Depth(arg);
}

TranslationCalibration calibrate_translation(Cpu& cpu, u32 samples) {
    if (samples == 0) throw SimError("bad_samples", "need at least one sample");
    TranslationCalibration cal;
    Machine& m = cpu.machine();
    const PAddr root = cpu.space().user_root;
    const VAddr base = cpu.code_base();

    auto find = [&](Depth want, VAddr from, u64 step, u64 count) -> std::optional<VAddr> {
        for (u64 i = 0; i < count; ++i) {
            VAddr v = canonical(from + i * step);
            if (m.mmu().resolve_depth(root, v) == want && !m.mmu().lookup(root, v)) return v;
        }
        return std::nullopt;
    };
    auto add = [&](Depth d, u32 lat) { cal.by_depth[int(d)].add(lat); };

    cpu.prefetch(base);
    for (u32 i = 0; i < samples; ++i) add(Depth::cached, cpu.prefetch(base));
    for (u32 i = 0; i < samples; ++i) {
        cpu.clflush(base);
        add(Depth::valid_uncached, cpu.prefetch(base));
    }
    const std::pair<Depth, std::optional<VAddr>> absent[] = {
        {Depth::pte_absent, find(Depth::pte_absent, base & ~(kPage2M - 1), kPage, 512)},
        {Depth::pde_absent, find(Depth::pde_absent, base & ~(kPage1G - 1), kPage2M, 512)},
        {Depth::pdpte_absent, find(Depth::pdpte_absent, base & ~((1ull << 39) - 1), kPage1G, 512)},
        {Depth::pml4e_absent, find(Depth::pml4e_absent, 0, 1ull << 39, 256)},
    };
    for (const auto& [d, v] : absent) {
        if (!v) continue;
        for (u32 i = 0; i < samples; ++i) add(d, cpu.prefetch(*v));
    }
    for (int d = 0; d < 6; ++d) {
        cal.present[d] = cal.by_depth[d].total() > 0;
        cal.median[d] = cal.by_depth[d].median();
    }
    return cal;
}

LevelProbe translation_level_probe(Cpu& cpu, VAddr v, const TranslationCalibration& cal) {
    LevelProbe r;
    r.latency = cpu.prefetch(v);
    r.depth = cal.classify(r.latency, &r.margin);
    r.level = level_class(r.depth);
    r.ambiguous = r.margin < 2;
    return r;
}

namespace {

// Majority vote over `k` probes spread evenly across [base, base + span).
bool region_present(Cpu& cpu, const TranslationCalibration& cal, VAddr base, u64 span, u32 k, Depth absent,
                    u64& probes) {
    u32 yes = 0;
    for (u32 j = 0; j < k; ++j) {
        VAddr v = canonical(base + (span / k) * j);
        ++probes;
        if (translation_level_probe(cpu, v, cal).depth < absent) ++yes;
    }
    return 2 * yes > k;
}

}  // namespace

TranslationMap recover_translation_levels(Cpu& cpu, const TranslationCalibration& cal, unsigned first_slot,
                                          unsigned last_slot, u32 per_region) {
    if (per_region == 0) throw SimError("bad_samples", "need at least one probe per region");
    TranslationMap out;
    u64& n = out.probes;
    for (unsigned s = first_slot; s <= last_slot && s < 512; ++s) {
        VAddr sb = VAddr(s) << 39;
        if (region_present(cpu, cal, sb, 1ull << 39, per_region, Depth::pml4e_absent, n)) out.pml4.insert(s);
    }
    for (unsigned s : out.pml4) {
        VAddr sb = VAddr(s) << 39;
        for (u64 i = 0; i < 512; ++i) {
            VAddr gb = canonical(sb + i * kPage1G);
            if (region_present(cpu, cal, gb, kPage1G, per_region, Depth::pdpte_absent, n)) out.pdpt.insert(gb);
        }
    }
    for (VAddr gb : out.pdpt) {
        for (u64 i = 0; i < 512; ++i) {
            VAddr mb = gb + i * kPage2M;
            if (region_present(cpu, cal, mb, kPage2M, per_region, Depth::pde_absent, n)) out.pd.insert(mb);
        }
    }
    for (VAddr mb : out.pd) {
        std::vector<VAddr> pages;
        for (u64 i = 0; i < 512; ++i) {
            VAddr pg = mb + i * kPage;
            if (region_present(cpu, cal, pg, kPage, per_region, Depth::pte_absent, n)) pages.push_back(pg);
        }
        if (pages.size() == 512) out.large.insert(mb);
        else out.pages.insert(pages.begin(), pages.end());
    }
    return out;
}

TranslationMap translation_ground_truth(Machine& m, PAddr root, unsigned first_slot, unsigned last_slot) {
    TranslationMap out;
    const auto& mem = m.mem();
    auto entry = [&](PAddr table, u64 i) { return mem.read64(table + 8 * i); };
    for (unsigned s = first_slot; s <= last_slot && s < 512; ++s) {
        u64 e4 = entry(root, s);
        if (!(e4 & pte::present)) continue;
        out.pml4.insert(s);
        PAddr pdpt = e4 & pte::frame_mask;
        for (u64 i = 0; i < 512; ++i) {
            u64 e3 = entry(pdpt, i);
            if (!(e3 & pte::present)) continue;
            VAddr gb = canonical((VAddr(s) << 39) + i * kPage1G);
            out.pdpt.insert(gb);
            if (e3 & pte::huge) {
                for (u64 j = 0; j < 512; ++j) {
                    out.pd.insert(gb + j * kPage2M);
                    out.large.insert(gb + j * kPage2M);
                }
                continue;
            }
            PAddr pd = e3 & pte::frame_mask;
            for (u64 j = 0; j < 512; ++j) {
                u64 e2 = entry(pd, j);
                if (!(e2 & pte::present)) continue;
                VAddr mb = gb + j * kPage2M;
                out.pd.insert(mb);
                if (e2 & pte::huge) {
                    out.large.insert(mb);
                    continue;
                }
                PAddr pt = e2 & pte::frame_mask;
                std::vector<VAddr> pages;
                for (u64 k = 0; k < 512; ++k)
                    if (entry(pt, k) & pte::present) pages.push_back(mb + k * kPage);
                if (pages.size() == 512) out.large.insert(mb);
                else out.pages.insert(pages.begin(), pages.end());
            }
        }
    }
    return out;
}

bool address_translation_probe(Cpu& cpu, VAddr p, VAddr p_bar, const Calibration& reload, u32 repeats) {
    for (u32 r = 0; r < std::max<u32>(1, repeats); ++r) {
        cpu.clflush(p);
        cpu.prefetch(p_bar);
        if (reload.is_hit(cpu.read(p).latency)) return true;
    }
    return false;
}

DirectMapSearch find_direct_map_alias(Cpu& cpu, VAddr p, const Calibration& reload, u32 repeats) {
    Machine& m = cpu.machine();
    auto map = m.mmu().lookup(cpu.space().user_root, p);
    if (!map) throw SimError("not_mapped", "probe address is not mapped");
    if (map->size != PageSize::m2) throw SimError("not_large_page", "the search assumes p lies in a 2 MB page");
    DirectMapSearch out;
    const VAddr base = m.config().direct_map_base;
    for (u64 k = 0; k * kPage2M < m.config().phys_mem; ++k) {
        VAddr cand = base + k * kPage2M + (p & (kPage2M - 1));
        ++out.candidates;
        if (address_translation_probe(cpu, p, cand, reload, repeats)) out.found.push_back(cand);
    }
    return out;
}

EvictPrefetchResult evict_prefetch(Cpu& cpu, VAddr p, u32 routine, std::span<const u64> args, const EvictionSet& set,
                                   const EvictionStrategy& s, const TranslationCalibration& cal) {
    EvictPrefetchResult r;
    run_strategy(s, set, cpu);
    r.control_latency = cpu.prefetch(p);
    r.control_ok = cal.classify(r.control_latency) == Depth::valid_uncached;
    run_strategy(s, set, cpu);
    cpu.syscall(routine, args);
    r.latency = cpu.prefetch(p);
    r.used = r.control_ok && cal.classify(r.latency) == Depth::cached;
    return r;
}

// ---------------------------------------------------------------- DRAM rows

RowMonitor::RowMonitor(Cpu& cpu, VAddr mine, PAddr other) : cpu_(cpu), mine_(mine) {
    Machine& m = cpu.machine();
    PAddr pm = phys_or_throw(cpu, mine);
    auto a = m.dram().locate(pm);
    auto b = m.dram().locate(other);
    if (m.dram().bank_of(pm) != m.dram().bank_of(other)) throw SimError("not_same_bank", "addresses use different banks");
    if (a.row == b.row) throw SimError("same_row", "addresses share a DRAM row");
    const auto& cfg = m.config();
    double base = cfg.caches.lat.dram_base;
    threshold_ = static_cast<u32>(std::lround(base * (cfg.dram_latency.row_hit + cfg.dram_latency.row_closed) / 2));
}

void RowMonitor::reset() {
    cpu_.read(mine_);
    cpu_.clflush(mine_);
}

ProbeResult RowMonitor::check() {
    ProbeResult r;
    r.latency = cpu_.read(mine_).latency;
    cpu_.clflush(mine_);
    r.hit = r.latency >= threshold_;
    return r;
}

Task dram_row_probe(Cpu& cpu, VAddr mine, PAddr other, u32 wait, ProbeResult& out) {
    RowMonitor m(cpu, mine, other);
    m.reset();
    for (u32 i = 0; i < wait; ++i) co_await cpu.yield();
    out = m.check();
}

}  // namespace memsim
