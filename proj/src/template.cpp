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

#include "memsim/template.hpp"

#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <limits>

namespace memsim {

// ---------------------------------------------------------------- AES-128

namespace {

u8 xtime(u8 x) { return static_cast<u8>((x << 1) ^ ((x & 0x80) ? 0x1b : 0)); }

u8 gmul(u8 a, u8 b) {
    u8 r = 0;
    while (b) {
        if (b & 1) r ^= a;
        a = xtime(a);
        b >>= 1;
    }
    return r;
}

u32 ror8(u32 x) { return (x >> 8) | (x << 24); }

u32 load_be(const u8* p) { return (u32(p[0]) << 24) | (u32(p[1]) << 16) | (u32(p[2]) << 8) | p[3]; }

void store_be(u8* p, u32 v) {
    p[0] = u8(v >> 24);
    p[1] = u8(v >> 16);
    p[2] = u8(v >> 8);
    p[3] = u8(v);
}

AesTables build_tables() {
    AesTables t;
    for (int x = 0; x < 256; ++x) {
        u8 inv = 0;
        if (x) {
            // brute-force inverse; 256x256 once at startup
            for (int y = 1; y < 256; ++y)
                if (gmul(u8(x), u8(y)) == 1) inv = u8(y);
        }
        u8 s = inv;
        u8 r = inv;
        for (int i = 0; i < 4; ++i) {
            r = static_cast<u8>((r << 1) | (r >> 7));
            s ^= r;
        }
        t.sbox[x] = s ^ 0x63;
    }
    for (int x = 0; x < 256; ++x) {
        u8 s = t.sbox[x];
        u32 w = (u32(xtime(s)) << 24) | (u32(s) << 16) | (u32(s) << 8) | u32(xtime(s) ^ s);
        t.te[0][x] = w;
        t.te[1][x] = ror8(w);
        t.te[2][x] = ror8(ror8(w));
        t.te[3][x] = ror8(ror8(ror8(w)));
    }
    return t;
}

}  // namespace

const AesTables& aes_tables() {
    static const AesTables t = build_tables();
    return t;
}

std::array<u32, 44> aes_expand_key(const Block& key) {
    const auto& sb = aes_tables().sbox;
    std::array<u32, 44> w{};
    for (int i = 0; i < 4; ++i) w[i] = load_be(key.data() + 4 * i);
    u8 rcon = 1;
    for (int i = 4; i < 44; ++i) {
        u32 t = w[i - 1];
        if (i % 4 == 0) {
            t = (t << 8) | (t >> 24);
            t = (u32(sb[t >> 24]) << 24) | (u32(sb[(t >> 16) & 0xff]) << 16) | (u32(sb[(t >> 8) & 0xff]) << 8) |
                sb[t & 0xff];
            t ^= u32(rcon) << 24;
            rcon = xtime(rcon);
        }
        w[i] = w[i - 4] ^ t;
    }
    return w;
}

namespace {

// Byte index used by each first-round lookup, in T-table evaluation order.
constexpr int kFirstRoundOrder[16] = {0, 5, 10, 15, 4, 9, 14, 3, 8, 13, 2, 7, 12, 1, 6, 11};

Block encrypt_with(const Block& key, const Block& pt, const std::function<void(int, u8)>& first_round) {
    const auto& T = aes_tables();
    auto rk = aes_expand_key(key);
    u32 s[4], t[4];
    for (int i = 0; i < 4; ++i) s[i] = load_be(pt.data() + 4 * i) ^ rk[i];
    if (first_round) {
        for (int idx : kFirstRoundOrder) first_round(idx, u8(s[idx / 4] >> (24 - 8 * (idx % 4))));
    }
    for (int round = 1; round < 10; ++round) {
        for (int c = 0; c < 4; ++c) {
            t[c] = T.te[0][s[c] >> 24] ^ T.te[1][(s[(c + 1) % 4] >> 16) & 0xff] ^ T.te[2][(s[(c + 2) % 4] >> 8) & 0xff] ^
                   T.te[3][s[(c + 3) % 4] & 0xff] ^ rk[4 * round + c];
        }
        std::copy(t, t + 4, s);
    }
    Block out{};
    for (int c = 0; c < 4; ++c) {
        u32 v = (u32(T.sbox[s[c] >> 24]) << 24) | (u32(T.sbox[(s[(c + 1) % 4] >> 16) & 0xff]) << 16) |
                (u32(T.sbox[(s[(c + 2) % 4] >> 8) & 0xff]) << 8) | u32(T.sbox[s[(c + 3) % 4] & 0xff]);
        store_be(out.data() + 4 * c, v ^ rk[40 + c]);
    }
    return out;
}

}  // namespace

Block aes_encrypt(const Block& key, const Block& pt) { return encrypt_with(key, pt, {}); }

// ---------------------------------------------------------------- victims

const char* to_string(VictimKind k) {
    switch (k) {
        case VictimKind::table_accessor: return "table_accessor";
        case VictimKind::code_accessor: return "code_accessor";
        case VictimKind::aes: return "aes";
    }
    return "?";
}

VictimKind parse_victim(const std::string& s) {
    if (s == "table_accessor" || s == "table") return VictimKind::table_accessor;
    if (s == "code_accessor" || s == "code") return VictimKind::code_accessor;
    if (s == "aes" || s == "aes_ttable") return VictimKind::aes;
    throw SimError("config", "unknown victim '" + s + "'");
}

Victim::Victim(Cpu& cpu, VictimKind kind, u32 events, u64 seed)
    : cpu_(cpu), kind_(kind), events_(kind == VictimKind::aes ? 16 : events), rng_(mix_seed(seed, 11)) {
    if (events_ == 0) throw SimError("config", "victim needs at least one event");
    Machine& m = cpu.machine();
    Os& os = m.os();
    auto& as = cpu.space();
    switch (kind) {
        case VictimKind::table_accessor:
            bytes_ = u64(events_) * kPage;
            image_ = os.mmap(as, bytes_, PageSize::k4, pte::user | pte::writable, false);
            for (u32 e = 0; e < events_; ++e) m.mem().fill_frame(*cpu.phys(image_ + e * kPage) / kPage, u8(0xff - e));
            break;
        case VictimKind::code_accessor:
            bytes_ = u64(events_) * kPage;
            image_ = os.mmap(as, bytes_, PageSize::k4, pte::user, false);
            for (u32 e = 0; e < events_; ++e) m.mem().fill_frame(*cpu.phys(image_ + e * kPage) / kPage, 0x90);
            break;
        case VictimKind::aes: {
            bytes_ = kPage;
            image_ = os.mmap(as, bytes_, PageSize::k4, pte::user, false);
            PAddr p = *cpu.phys(image_);
            const auto& T = aes_tables();
            for (unsigned j = 0; j < 4; ++j)
                for (unsigned x = 0; x < 256; ++x)
                    for (unsigned b = 0; b < 4; ++b) m.mem().write8(p + 1024 * j + 4 * x + b, u8(T.te[j][x] >> (8 * b)));
            break;
        }
    }
}

void Victim::trigger(u32 event) {
    if (event >= events_) throw SimError("bad_event", "event out of range");
    log_.push_back(event);
    switch (kind_) {
        case VictimKind::table_accessor:
            cpu_.read(image_ + u64(event) * kPage);
            break;
        case VictimKind::code_accessor: {
            // a page-aligned function of 1024 one-byte instructions: 16 lines
            VAddr f = image_ + u64(event) * kPage;
            Cpu::Call call(cpu_, f);
            for (unsigned l = 1; l < 16; ++l) cpu_.exec(f + 64 * l);
            break;
        }
        case VictimKind::aes: {
            Block pt{};
            for (auto& b : pt) b = static_cast<u8>(rng_.next());
            pt[0] = static_cast<u8>((event << 4) | (pt[0] & 0x0f));
            encrypt(pt);
            break;
        }
    }
}

Block Victim::encrypt(const Block& pt) {
    if (kind_ != VictimKind::aes) throw SimError("bad_victim", "victim has no AES tables");
    return encrypt_with(key_, pt, [&](int i, u8 s) { cpu_.read(table_base(i % 4) + 4ull * s); });
}

VAddr Victim::share_with(Cpu& attacker) {
    return cpu_.machine().share_mapping(cpu_, image_, bytes_, attacker, pte::user);
}

// ---------------------------------------------------------------- templates

double CacheTemplateMatrix::h(std::size_t r, std::size_t c) const {
    return trials[r][c] ? double(hits[r][c]) / double(trials[r][c]) : 0.0;
}

std::vector<double> CacheTemplateMatrix::profile(std::size_t c) const {
    std::vector<double> p(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) p[r] = h(r, c);
    return p;
}

std::string CacheTemplateMatrix::label(std::size_t c) const {
    std::string s;
    for (u32 e : columns[c]) s += (s.empty() ? "" : "+") + std::to_string(e);
    return s;
}

std::vector<double> CacheTemplateMatrix::fscore() const {
    std::vector<double> out(rows.size(), 0.0);
    if (columns.empty()) return out;
    const double nc = double(columns.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        double mean = 0;
        for (std::size_t c = 0; c < columns.size(); ++c) mean += h(r, c);
        mean /= nc;
        double between = 0, within = 0;
        for (std::size_t c = 0; c < columns.size(); ++c) {
            double x = h(r, c);
            between += (x - mean) * (x - mean);
            if (trials[r][c]) within += x * (1 - x) / double(trials[r][c]);
        }
        out[r] = (between / nc) / (within / nc + 1e-9);
    }
    return out;
}

void CacheTemplateMatrix::write_csv(std::ostream& os) const {
    os << "address";
    for (std::size_t c = 0; c < columns.size(); ++c) os << ',' << label(c);
    os << '\n';
    char buf[32];
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(rows[r]));
        os << buf;
        for (std::size_t c = 0; c < columns.size(); ++c) {
            std::snprintf(buf, sizeof buf, ",%.4f", h(r, c));
            os << buf;
        }
        os << '\n';
    }
}

namespace {

std::vector<std::vector<std::size_t>> probe_batches(const MonitorFactory& f, const std::vector<VAddr>& lines) {
    std::vector<std::vector<std::size_t>> batches;
    if (!f.cpu->machine().config().caches.prefetcher.enabled) {
        batches.emplace_back(lines.size());
        for (std::size_t i = 0; i < lines.size(); ++i) batches[0][i] = i;
        return batches;
    }
    // k-th batch takes the k-th requested line of every page
    std::map<VAddr, std::size_t> seen;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::size_t k = seen[lines[i] / kPage]++;
        if (k >= batches.size()) batches.resize(k + 1);
        batches[k].push_back(i);
    }
    return batches;
}

}  // namespace

CacheTemplateMatrix profile(const MonitorFactory& f, Victim& victim, const std::vector<VAddr>& lines,
                            const std::vector<u32>& events, u32 triggers) {
    if (triggers == 0 || lines.empty() || events.empty())
        throw SimError("empty_profile", "profiling needs lines, events and a non-zero trigger count");
    CacheTemplateMatrix m;
    m.rows = lines;
    m.hits.assign(lines.size(), std::vector<u64>(events.size(), 0));
    m.trials.assign(lines.size(), std::vector<u64>(events.size(), 0));
    for (std::size_t c = 0; c < events.size(); ++c) {
        m.columns.push_back({events[c]});
        m.merge_map[events[c]] = c;
    }
    std::vector<std::unique_ptr<LineMonitor>> mons;
    for (VAddr l : lines) mons.push_back(f.make(l));
    auto batches = probe_batches(f, lines);

    std::vector<u64> idle_hits(lines.size(), 0);
    for (std::size_t c = 0; c <= events.size(); ++c) {
        const bool idle = c == events.size();
        for (u32 t = 0; t < triggers; ++t) {
            for (const auto& b : batches) {
                for (std::size_t i : b) mons[i]->reset();
                if (!idle) victim.trigger(events[c]);
                for (std::size_t i : b) {
                    bool hit = mons[i]->check().hit;
                    if (idle) {
                        idle_hits[i] += hit;
                    } else {
                        m.hits[i][c] += hit;
                        ++m.trials[i][c];
                    }
                }
            }
        }
    }
    for (u64 k : idle_hits) m.idle.push_back(double(k) / triggers);
    return m;
}

double mse(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw SimError("size_mismatch", "vectors differ in length");
    if (a.empty()) return 0;
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / double(a.size());
}

CacheTemplateMatrix prune(const CacheTemplateMatrix& in, double min_range, double merge_mse) {
    if (in.empty()) throw SimError("empty_matrix", "nothing to prune");
    // rows with too little spread across events carry no information
    std::vector<std::size_t> keep;
    for (std::size_t r = 0; r < in.rows.size(); ++r) {
        double lo = 1, hi = 0;
        for (std::size_t c = 0; c < in.columns.size(); ++c) {
            lo = std::min(lo, in.h(r, c));
            hi = std::max(hi, in.h(r, c));
        }
        if (hi - lo >= min_range) keep.push_back(r);
    }
    auto project = [&](std::size_t c) {
        std::vector<double> p;
        for (std::size_t r : keep) p.push_back(in.h(r, c));
        return p;
    };

    // greedy merge against each group's first column
    std::vector<std::vector<std::size_t>> groups;
    std::vector<std::vector<double>> reps;
    for (std::size_t c = 0; c < in.columns.size(); ++c) {
        auto p = project(c);
        bool merged = false;
        for (std::size_t g = 0; g < groups.size() && !merged; ++g) {
            if (mse(p, reps[g]) < merge_mse) {
                groups[g].push_back(c);
                merged = true;
            }
        }
        if (!merged) {
            groups.push_back({c});
            reps.push_back(std::move(p));
        }
    }

    CacheTemplateMatrix out;
    std::vector<std::vector<double>> seen_rows;
    for (std::size_t r : keep) {
        std::vector<u64> k(groups.size(), 0), n(groups.size(), 0);
        for (std::size_t g = 0; g < groups.size(); ++g)
            for (std::size_t c : groups[g]) {
                k[g] += in.hits[r][c];
                n[g] += in.trials[r][c];
            }
        std::vector<double> ratios(groups.size());
        for (std::size_t g = 0; g < groups.size(); ++g) ratios[g] = n[g] ? double(k[g]) / double(n[g]) : 0.0;
        if (std::find(seen_rows.begin(), seen_rows.end(), ratios) != seen_rows.end()) continue;
        seen_rows.push_back(ratios);
        out.rows.push_back(in.rows[r]);
        out.hits.push_back(std::move(k));
        out.trials.push_back(std::move(n));
        out.idle.push_back(r < in.idle.size() ? in.idle[r] : 0.0);
    }
    for (std::size_t g = 0; g < groups.size(); ++g) {
        std::vector<u32> evs;
        for (std::size_t c : groups[g]) {
            evs.insert(evs.end(), in.columns[c].begin(), in.columns[c].end());
            for (u32 e : in.columns[c]) out.merge_map[e] = g;
        }
        out.columns.push_back(std::move(evs));
    }
    return out;
}

std::vector<LogEntry> exploit(const CacheTemplateMatrix& m, const MonitorFactory& f, const ExploitOptions& opt,
                              const std::function<void(u64)>& step) {
    std::vector<LogEntry> log;
    if (m.empty()) return log;
    std::vector<std::unique_ptr<LineMonitor>> mons;
    for (VAddr l : m.rows) mons.push_back(f.make(l));
    for (auto& mon : mons) mon->reset();
    std::vector<std::vector<double>> profiles;
    for (std::size_t c = 0; c < m.columns.size(); ++c) profiles.push_back(m.profile(c));
    std::vector<double> idle = m.idle;
    idle.resize(m.rows.size(), 0.0);

    std::vector<double> h(m.rows.size());
    for (u64 w = 0; w < opt.windows; ++w) {
        if (step) step(w);
        for (std::size_t i = 0; i < mons.size(); ++i) h[i] = mons[i]->check().hit ? 1.0 : 0.0;
        Cycles t = f.cpu->rdtsc();
        double best = mse(h, idle);
        std::size_t arg = m.columns.size();
        for (std::size_t c = 0; c < profiles.size(); ++c) {
            double e = mse(h, profiles[c]);
            if (e < best) {
                best = e;
                arg = c;
            }
        }
        if (arg == m.columns.size() || best > opt.reject_mse) continue;
        log.push_back({t, w, arg, m.label(arg), best});
    }
    return log;
}

AesRecovery aes_recover_upper_nibbles(const MonitorFactory& f, Victim& victim, VAddr attacker_tables, u64 seed,
                                      u32 cap) {
    AesRecovery out;
    Rng rng(mix_seed(seed, 13));
    std::array<std::unique_ptr<LineMonitor>, 4> mons;
    for (unsigned j = 0; j < 4; ++j) {
        mons[j] = f.make(attacker_tables + 1024ull * j);
        mons[j]->reset();
    }
    for (unsigned i = 0; i < 16; ++i) {
        std::vector<u8> cands(16);
        for (u8 g = 0; g < 16; ++g) cands[g] = g;
        std::size_t next = 0;
        u32 used = 0;
        while (cands.size() > 1 && used < cap) {
            next %= cands.size();
            u8 g = cands[next];
            Block pt{};
            for (auto& b : pt) b = static_cast<u8>(rng.next());
            pt[i] = static_cast<u8>((g << 4) | (pt[i] & 0x0f));
            victim.encrypt(pt);
            ++used;
            if (mons[i % 4]->check().hit) ++next;
            else cands.erase(cands.begin() + static_cast<std::ptrdiff_t>(next));
        }
        out.nibbles[i] = cands.empty() ? 0 : cands.front();
        out.resolved[i] = cands.size() == 1;
        out.encryptions[i] = used;
        out.total += used;
    }
    return out;
}

}  // namespace memsim
