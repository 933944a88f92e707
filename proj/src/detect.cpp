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

#include "memsim/detect.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <memory>

#include "memsim/primitives.hpp"
#include "memsim/rowhammer.hpp"
#include "memsim/template.hpp"

namespace memsim {

void DetectorConfig::validate() const {
    if (!(k_m > 0) || !(k_r > 0)) throw SimError("config", "detector thresholds must be positive");
    if (period == 0) throw SimError("config", "detector period must be positive");
}

const char* to_string(Verdict v) { return v == Verdict::malicious ? "malicious" : "benign"; }

std::string Classification::trigger() const {
    if (miss_trip && ref_trip) return "both";
    if (miss_trip) return "misses";
    if (ref_trip) return "references";
    return "";
}

Classification classify(const PerfCounters& c, const DetectorConfig& cfg) {
    u64 itlb = c.itlb_ra + c.itlb_wa;
    if (itlb == 0) throw SimError("no_itlb_events", "actor has no ITLB events to normalize by");
    Classification r;
    r.misses_per_itlb = double(c.cache_misses) / double(itlb);
    r.refs_per_itlb = double(c.cache_references) / double(itlb);
    r.miss_trip = r.misses_per_itlb >= cfg.k_m;
    r.ref_trip = r.refs_per_itlb >= cfg.k_r;
    r.verdict = r.miss_trip || r.ref_trip ? Verdict::malicious : Verdict::benign;
    return r;
}

CounterSampler::CounterSampler(Machine& m, Cycles period) : m_(m) {
    snapshot(m.now());
    m.set_sampler(period, [this](Cycles now) { snapshot(now); });
}

void CounterSampler::snapshot(Cycles) {
    std::vector<PerfCounters> s(m_.actor_count());
    for (u32 i = 0; i < s.size(); ++i) s[i] = m_.actor(i).counters();
    snaps_.push_back(std::move(s));
}

std::vector<PerfCounters> CounterSampler::windows(u32 actor) const {
    auto at = [&](const std::vector<PerfCounters>& s) { return actor < s.size() ? s[actor] : PerfCounters{}; };
    std::vector<PerfCounters> out;
    PerfCounters prev = at(snaps_.front());
    for (std::size_t i = 1; i < snaps_.size(); ++i) {
        PerfCounters cur = at(snaps_[i]);
        out.push_back(cur - prev);
        prev = cur;
    }
    if (actor < m_.actor_count()) {
        PerfCounters tail = m_.actor(actor).counters() - prev;
        if (!(tail.instructions == 0 && tail.itlb_ra == 0 && tail.cache_references == 0)) out.push_back(tail);
    }
    return out;
}

WindowSummary classify_windows(const std::vector<PerfCounters>& windows, const DetectorConfig& cfg) {
    WindowSummary w;
    w.windows = windows.size();
    for (const auto& c : windows) {
        if (c.itlb_ra + c.itlb_wa == 0) continue;
        ++w.classified;
        if (classify(c, cfg).verdict == Verdict::malicious) ++w.flagged;
    }
    return w;
}

// ---------------------------------------------------------------- scenario actors

namespace {

bool running(Cpu& cpu, Cycles end) { return cpu.machine().now() < end; }

// Mostly asleep: wakes up, runs a little code over a hot buffer.
Task idle_task(Cpu& cpu, VAddr buf, Cycles end) {
    for (u64 i = 0; running(cpu, end); ++i) {
        {
            Cpu::Call call(cpu, cpu.code_page(1 + i % 4));
            for (unsigned l = 0; l < 4; ++l) cpu.read(buf + ((i * 4 + l) % 64) * 64);
        }
        cpu.compute(20000);
        co_await cpu.yield();
    }
}

// CPU-bound loop through a math helper.
Task stress_c_task(Cpu& cpu, Cycles end) {
    for (u64 i = 0; running(cpu, end); ++i) {
        {
            Cpu::Call call(cpu, cpu.code_page(1 + i % 2));
            cpu.compute(400);
        }
        if (i % 16 == 0) co_await cpu.yield();
    }
}

// sync() in a loop; the kernel writes back a few buffer lines each time.
Task stress_i_task(Cpu& cpu, u32 routine, Cycles end) {
    while (running(cpu, end)) {
        cpu.syscall(routine);
        cpu.compute(200);
        co_await cpu.yield();
    }
}

// Writes then reads back an array, one memset-sized chunk per helper call.
Task stress_m_task(Cpu& cpu, VAddr buf, u64 bytes, Cycles end) {
    u64 chunks = std::max<u64>(1, bytes / kPage);
    for (u64 i = 0; running(cpu, end); ++i) {
        VAddr chunk = buf + (i % chunks) * kPage;
        {
            Cpu::Call call(cpu, cpu.code_page(1));
            for (u64 off = 0; off < kPage; off += 64) cpu.write(chunk + off, i);
        }
        {
            Cpu::Call call(cpu, cpu.code_page(2));
            for (u64 off = 0; off < kPage; off += 64) cpu.read(chunk + off);
        }
        co_await cpu.yield();
    }
}

Task victim_task(Victim& v, u64 seed, Cycles end) {
    Cpu& cpu = v.cpu();
    Rng rng(seed);
    for (u64 i = 0; running(cpu, end); ++i) {
        {
            Cpu::Call call(cpu, cpu.code_page(1 + i % 3));
            v.trigger(static_cast<u32>(rng.below(v.events())));
        }
        cpu.compute(30000);
        co_await cpu.yield();
    }
}

// Flush+Reload over one line per victim page; a logging helper runs every 64 sweeps.
Task spy_task(Cpu& cpu, std::vector<std::unique_ptr<LineMonitor>>& mons, Cycles end) {
    for (auto& m : mons) m->reset();
    u64 hits = 0;
    for (u64 i = 0; running(cpu, end); ++i) {
        for (auto& m : mons) hits += m->check().hit;
        if (i % 64 == 63) {
            Cpu::Call call(cpu, cpu.code_page(1));
            cpu.compute(static_cast<u32>(10 + hits % 8));
        }
        co_await cpu.yield();
    }
}

// Double-sided clflush loop; checks progress every 1024 rounds.
Task hammer_task(Cpu& cpu, HammerPair pair, Cycles end) {
    for (u64 i = 0; running(cpu, end); ++i) {
        cpu.read(pair.a1);
        cpu.read(pair.a2);
        cpu.clflush(pair.a1);
        cpu.clflush(pair.a2);
        if (i % 1024 == 1023) {
            Cpu::Call call(cpu, cpu.code_page(1));
            cpu.compute(50);
        }
        if (i % 16 == 15) co_await cpu.yield();
    }
}

struct Member {
    Cpu* cpu;
    bool attack;
    bool calibrate;
};

class Scenario {
public:
    Scenario(const MachineConfig& cfg, std::string name) : m(cfg), name_(std::move(name)) {}

    Machine m;

    void add(Cpu& cpu, bool attack, bool calibrate) { members_.push_back({&cpu, attack, calibrate}); }

    // Runs every started task to completion and profiles the members from the
    // moment the sampler starts.
    void run(Cycles period, std::vector<ActorProfile>& out) {
        std::vector<PerfCounters> start;
        for (auto& mb : members_) start.push_back(mb.cpu->counters());
        CounterSampler sampler(m, period);
        m.run(Schedule::round_robin, ~0ull);
        for (std::size_t i = 0; i < members_.size(); ++i) {
            ActorProfile p;
            p.scenario = name_;
            p.actor = members_[i].cpu->name();
            p.attack = members_[i].attack;
            p.calibrate = members_[i].calibrate;
            p.counters = members_[i].cpu->counters() - start[i];
            p.window_counters = sampler.windows(members_[i].cpu->id());
            out.push_back(std::move(p));
        }
    }

private:
    std::string name_;
    std::vector<Member> members_;
};

VAddr kernel_buffer(Machine& m, u64 frames) {
    VAddr first = 0;
    for (u64 i = 0; i < frames; ++i) {
        u64 pfn = m.os().alloc_frame(FrameUse::kernel);
        VAddr v = m.os().direct_map(pfn * kPage);
        if (i == 0) first = v;
    }
    return first;
}

void benign_scenarios(const MachineConfig& cfg, const SuiteOptions& opt, std::vector<ActorProfile>& out) {
    const Cycles d = opt.duration;
    {
        Scenario s(cfg, "idle");
        Cpu& cpu = s.m.spawn("idle", ActorKind::benign, 0);
        VAddr buf = s.m.os().mmap(cpu.space(), kPage);
        cpu.start(idle_task(cpu, buf, s.m.now() + d));
        s.add(cpu, false, true);
        s.run(opt.detector.period, out);
    }
    {
        Scenario s(cfg, "stress_c");
        Cpu& cpu = s.m.spawn("stress_c", ActorKind::benign, 0);
        cpu.start(stress_c_task(cpu, s.m.now() + d));
        s.add(cpu, false, true);
        s.run(opt.detector.period, out);
    }
    {
        Scenario s(cfg, "stress_i");
        Cpu& cpu = s.m.spawn("stress_i", ActorKind::benign, 0);
        // Only the first frame of the buffer is touched: eight dirty lines per call.
        VAddr kbuf = kernel_buffer(s.m, 1);
        u32 sync = s.m.register_routine([kbuf](Cpu& c, std::span<const u64>) -> u64 {
            for (unsigned l = 0; l < 8; ++l) c.write(kbuf + 64 * l, l);
            c.compute(3000);
            return 0;
        });
        cpu.start(stress_i_task(cpu, sync, s.m.now() + d));
        s.add(cpu, false, true);
        s.run(opt.detector.period, out);
    }
    {
        Scenario s(cfg, "stress_m");
        Cpu& cpu = s.m.spawn("stress_m", ActorKind::benign, 0);
        u64 bytes = opt.stress_bytes;
        if (bytes == 0) bytes = (cfg.caches.l2 ? cfg.caches.l2->capacity() : cfg.caches.l1.capacity()) / 2;
        bytes = std::max<u64>(kPage, bytes / kPage * kPage);
        VAddr buf = s.m.os().mmap(cpu.space(), bytes);
        cpu.start(stress_m_task(cpu, buf, bytes, s.m.now() + d));
        s.add(cpu, false, true);
        s.run(opt.detector.period, out);
    }
}

void attack_scenarios(const MachineConfig& cfg, const SuiteOptions& opt, std::vector<ActorProfile>& out) {
    const Cycles d = opt.duration;
    unsigned other = cfg.caches.cores > 1 ? 1 : 0;
    {
        Scenario s(cfg, "fr_spy");
        Cpu& vcpu = s.m.spawn("victim", ActorKind::victim, other);
        Cpu& spy = s.m.spawn("spy", ActorKind::attacker, 0);
        Victim victim(vcpu, VictimKind::table_accessor, 16, mix_seed(opt.seed, 41));
        VAddr base = victim.share_with(spy);
        Calibration cal = calibrate(spy, ProbeKind::flush_reload, 256);
        std::vector<std::unique_ptr<LineMonitor>> mons;
        for (u32 e = 0; e < victim.events(); ++e) mons.push_back(std::make_unique<FlushReload>(spy, base + e * kPage, cal));
        Cycles end = s.m.now() + d;
        vcpu.start(victim_task(victim, mix_seed(opt.seed, 42), end));
        spy.start(spy_task(spy, mons, end));
        s.add(vcpu, false, true);
        s.add(spy, true, true);
        s.run(opt.detector.period, out);
    }
    {
        Scenario s(cfg, "rowhammer");
        Cpu& cpu = s.m.spawn("hammer", ActorKind::attacker, 0);
        VAddr pool = s.m.os().mmap(cpu.space(), kPage2M, PageSize::m2);
        auto pairs = select_double_sided(cpu, pool, kPage2M);
        cpu.start(hammer_task(cpu, pairs[pairs.size() / 2], s.m.now() + d));
        s.add(cpu, true, true);
        s.run(opt.detector.period, out);
    }
}

std::string technique(ProbeKind k) {
    switch (k) {
        case ProbeKind::flush_flush: return "F+F";
        case ProbeKind::flush_reload: return "F+R";
        case ProbeKind::prime_probe: return "P+P";
        case ProbeKind::evict_reload: return "E+R";
    }
    return "?";
}

void covert_scenarios(const MachineConfig& cfg, const SuiteOptions& opt, SuiteReport& r) {
    Rng rng(mix_seed(opt.seed, 5));
    std::vector<u8> data(opt.covert_bytes);
    for (auto& b : data) b = static_cast<u8>(rng.next());
    unsigned other = cfg.caches.cores > 1 ? 1 : 0;
    for (ProbeKind kind : opt.bindings) {
        for (u32 n : opt.packet_sizes) {
            Machine m(cfg);
            Cpu& snd = m.spawn("sender", ActorKind::attacker, 0);
            Cpu& rcv = m.spawn("receiver", ActorKind::attacker, other);
            ChannelOptions co;
            co.packet_bytes = n;
            co.seed = opt.seed;
            ChannelBinding b(snd, rcv, kind, n * 8, co.calibration_samples);
            CovertSession session(b, data, co);
            CounterSampler sampler(m, opt.detector.period);
            ChannelStats st = session.run();
            int row = static_cast<int>(r.covert.size());
            std::string name = "covert_" + technique(kind) + "_" + std::to_string(n);
            for (int side = 0; side < 2; ++side) {
                ActorProfile p;
                p.scenario = name;
                p.actor = side == 0 ? "sender" : "receiver";
                p.attack = true;
                p.counters = side == 0 ? st.sender : st.receiver;
                p.window_counters = sampler.windows(side == 0 ? snd.id() : rcv.id());
                p.covert_row = row;
                p.sender = side == 0;
                r.actors.push_back(std::move(p));
            }
            r.covert.push_back(std::move(st));
        }
    }
}

}  // namespace

void reclassify(SuiteReport& r, const DetectorConfig& cfg) {
    for (auto& p : r.actors) {
        p.result = classify(p.counters, cfg);
        p.windows = classify_windows(p.window_counters, cfg);
        if (p.covert_row >= 0) {
            auto& st = r.covert.at(static_cast<std::size_t>(p.covert_row));
            (p.sender ? st.sender_stealth : st.receiver_stealth) = p.result.verdict == Verdict::benign;
        }
    }
}

SuiteReport evaluate_suite(const MachineConfig& cfg, const SuiteOptions& opt) {
    opt.detector.validate();
    SuiteReport r;
    benign_scenarios(cfg, opt, r.actors);
    attack_scenarios(cfg, opt, r.actors);
    covert_scenarios(cfg, opt, r);
    reclassify(r, opt.detector);
    return r;
}

Thresholds calibrate_thresholds(const std::vector<ActorProfile>& actors) {
    auto pick = [&](auto metric) {
        double benign_max = 0;
        for (const auto& p : actors)
            if (p.calibrate && !p.attack) benign_max = std::max(benign_max, metric(p));
        double above = std::numeric_limits<double>::infinity();
        for (const auto& p : actors)
            if (p.calibrate && p.attack && metric(p) > benign_max) above = std::min(above, metric(p));
        if (std::isinf(above)) return benign_max * (1 + 1e-9) + 1e-9;
        return (benign_max + above) / 2;
    };
    auto ratio = [](u64 x, const PerfCounters& c) {
        u64 itlb = c.itlb_ra + c.itlb_wa;
        if (itlb == 0) throw SimError("no_itlb_events", "actor has no ITLB events to normalize by");
        return double(x) / double(itlb);
    };
    Thresholds t;
    t.k_m = pick([&](const ActorProfile& p) { return ratio(p.counters.cache_misses, p.counters); });
    t.k_r = pick([&](const ActorProfile& p) { return ratio(p.counters.cache_references, p.counters); });
    DetectorConfig dc;
    dc.k_m = t.k_m;
    dc.k_r = t.k_r;
    t.separates = true;
    for (const auto& p : actors) {
        if (!p.calibrate) continue;
        bool bad = classify(p.counters, dc).verdict == Verdict::malicious;
        if (bad != p.attack) t.separates = false;
    }
    return t;
}

void write_stealth_csv(std::ostream& os, const std::vector<ActorProfile>& actors) {
    os << "scenario,actor,attack,references_per_itlb,misses_per_itlb,verdict,trigger,windows,flagged_windows\n";
    auto old = os.flags();
    os << std::fixed << std::setprecision(4);
    for (const auto& p : actors)
        os << p.scenario << ',' << p.actor << ',' << (p.attack ? 1 : 0) << ',' << p.result.refs_per_itlb << ','
           << p.result.misses_per_itlb << ',' << to_string(p.result.verdict) << ',' << p.result.trigger() << ','
           << p.windows.classified << ',' << p.windows.flagged << '\n';
    os.flags(old);
}

}  // namespace memsim
