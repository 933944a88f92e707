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

#include "memsim/covert.hpp"

#include <algorithm>
#include <bit>
#include <iomanip>
#include <unordered_set>

namespace memsim {

u16 crc16(std::span<const u8> bytes) {
    u16 crc = 0xffff;
    for (u8 b : bytes) {
        crc ^= static_cast<u16>(b) << 8;
        for (int i = 0; i < 8; ++i) crc = (crc & 0x8000) ? static_cast<u16>((crc << 1) ^ 0x1021) : static_cast<u16>(crc << 1);
    }
    return crc;
}

u8 crc8(std::span<const u8> bytes) {
    u8 crc = 0;
    for (u8 b : bytes) {
        crc ^= b;
        for (int i = 0; i < 8; ++i) crc = (crc & 0x80) ? static_cast<u8>((crc << 1) ^ 0x07) : static_cast<u8>(crc << 1);
    }
    return crc ^ 0x55;
}

Packet Packet::make(std::span<const u8> payload, u8 seq) {
    Packet p;
    p.payload.assign(payload.begin(), payload.end());
    p.seq = seq;
    auto b = p.bytes();
    p.crc = crc16(std::span<const u8>(b.data(), b.size() - 2));
    return p;
}

std::vector<u8> Packet::bytes() const {
    std::vector<u8> b(payload);
    b.push_back(seq);
    b.push_back(static_cast<u8>(crc >> 8));
    b.push_back(static_cast<u8>(crc));
    return b;
}

Packet Packet::parse(std::span<const u8> bytes) {
    if (bytes.size() < 3) throw SimError("config", "packet shorter than its header");
    Packet p;
    std::size_t n = bytes.size() - 3;
    p.payload.assign(bytes.begin(), bytes.begin() + n);
    p.seq = bytes[n];
    p.crc = static_cast<u16>((bytes[n + 1] << 8) | bytes[n + 2]);
    return p;
}

bool Packet::valid() const {
    std::vector<u8> b(payload);
    b.push_back(seq);
    return crc16(b) == crc;
}

u16 encode_ack(u8 seq) {
    u8 s[1] = {seq};
    return static_cast<u16>((seq << 8) | crc8(s));
}

std::optional<u8> decode_ack(u16 word) {
    u8 s[1] = {static_cast<u8>(word >> 8)};
    if (crc8(s) != static_cast<u8>(word)) return std::nullopt;
    return s[0];
}

std::vector<bool> to_bits(std::span<const u8> bytes) {
    std::vector<bool> bits;
    bits.reserve(bytes.size() * 8);
    for (u8 b : bytes)
        for (int i = 7; i >= 0; --i) bits.push_back((b >> i) & 1);
    return bits;
}

std::vector<u8> from_bits(const std::vector<bool>& bits) {
    std::vector<u8> out((bits.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i]) out[i / 8] |= static_cast<u8>(0x80 >> (i % 8));
    return out;
}

// ---------------------------------------------------------------- binding

ChannelBinding::ChannelBinding(Cpu& sender, Cpu& receiver, ProbeKind kind, u32 data_bits, u32 calibration_samples)
    : sender_(sender), receiver_(receiver), kind_(kind) {
    if (kind == ProbeKind::evict_reload) throw SimError("config", "covert channels use fr, ff or pp");
    if (data_bits == 0) throw SimError("config", "channel needs at least one data bit");
    Machine& m = sender.machine();
    auto& caches = m.caches();
    const auto& llc = caches.config().llc;
    u32 lines = data_bits + kAckBits;
    // Without the prefetcher a page may carry many bit lines, which keeps the TLB
    // out of the flush timing; with it, one line per page.
    u32 per_page = caches.config().prefetcher.enabled ? 1 : u32(kPage / llc.line_size);
    u64 pages = (lines + per_page - 1) / per_page * 2 + 1;
    u64 bytes = pages * kPage;

    VAddr base = m.os().mmap(sender.space(), bytes, PageSize::k4, pte::user | pte::writable, false);
    VAddr rbase = m.share_mapping(sender, base, bytes, receiver);
    std::unordered_set<u32> used;
    std::vector<VAddr> s_lines, r_lines;
    std::vector<PAddr> p_lines;
    for (u64 pg = 0; pg < pages && s_lines.size() < lines; ++pg) {
        PAddr pp = *sender.phys(base + pg * kPage);
        u32 taken = 0;
        for (u64 off = 0; off < kPage && taken < per_page && s_lines.size() < lines; off += llc.line_size) {
            if (!used.insert(caches.llc_set(pp + off)).second) continue;
            s_lines.push_back(base + pg * kPage + off);
            r_lines.push_back(rbase + pg * kPage + off);
            p_lines.push_back(pp + off);
            ++taken;
        }
    }
    if (s_lines.size() < lines) throw SimError("set_too_small", "no free cache set for covert bit");
    data_lines_.assign(s_lines.begin(), s_lines.begin() + data_bits);
    ack_lines_.assign(s_lines.begin() + data_bits, s_lines.end());

    if (kind != ProbeKind::prime_probe) {
        Calibration rcal = calibrate(receiver, kind, calibration_samples);
        Calibration scal = calibrate(sender, kind, calibration_samples);
        auto mon = [&](Cpu& c, VAddr v, const Calibration& cal) -> std::unique_ptr<LineMonitor> {
            if (kind == ProbeKind::flush_flush) return std::make_unique<FlushFlush>(c, v, cal);
            return std::make_unique<FlushReload>(c, v, cal);
        };
        for (u32 i = 0; i < lines; ++i) {
            if (i < data_bits) {
                data_tx_.push_back({s_lines[i], {}});
                data_rx_.push_back(mon(receiver, r_lines[i], rcal));
            } else {
                ack_tx_.push_back({r_lines[i], {}});
                ack_rx_.push_back(mon(sender, s_lines[i], scal));
            }
        }
        return;
    }

    // Prime+Probe: the shared lines only name the sets; both sides use private
    // 2 MB-page pools and static sets.
    strategy_ = default_strategy(llc);
    u32 prime = llc.policy == Policy::random ? llc.ways - 1 : llc.ways;
    u64 total_sets = u64(llc.sets) * llc.slices;
    u64 pool_bytes = std::max<u64>(strategy_.S, prime) * total_sets * llc.line_size * 2;
    pool_bytes = (pool_bytes + kPage2M - 1) / kPage2M * kPage2M;
    VAddr spool = m.os().mmap(sender.space(), pool_bytes, PageSize::m2);
    VAddr rpool = m.os().mmap(receiver.space(), pool_bytes, PageSize::m2);
    CongruenceIndex sidx(sender, spool, pool_bytes);
    CongruenceIndex ridx(receiver, rpool, pool_bytes);
    Calibration rcal = calibrate(receiver, ProbeKind::flush_reload, calibration_samples);
    Calibration scal = calibrate(sender, ProbeKind::flush_reload, calibration_samples);
    auto take = [&](const CongruenceIndex& idx, PAddr p, u32 n) {
        auto v = idx.take(p, n);
        if (v.size() < n) throw SimError("set_too_small", "eviction pool too small for the covert sets");
        return v;
    };
    u32 settle = llc.policy == Policy::random ? 1 : 0;
    for (u32 i = 0; i < lines; ++i) {
        PAddr p = p_lines[i];
        if (i < data_bits) {
            data_tx_.push_back({0, EvictionSet{0, take(sidx, p, strategy_.S)}});
            data_rx_.push_back(std::make_unique<PrimeProbe>(receiver, r_lines[i], take(ridx, p, prime), rcal, 1, settle));
        } else {
            ack_tx_.push_back({0, EvictionSet{0, take(ridx, p, strategy_.S)}});
            ack_rx_.push_back(std::make_unique<PrimeProbe>(sender, s_lines[i], take(sidx, p, prime), scal, 1, settle));
        }
    }
    Rng rng(mix_seed(m.config().seed, 21));
    train(data_tx_, sender, data_rx_, prime, rng);
    train(ack_tx_, receiver, ack_rx_, prime, rng);
}

// Known preamble: pick the miss count that best separates idle sets from primed ones.
void ChannelBinding::train(const std::vector<Signal>& tx, Cpu& cpu, std::vector<std::unique_ptr<LineMonitor>>& rx,
                           u32 prime, Rng& rng) {
    constexpr u32 kRounds = 64;
    std::vector<std::array<u64, 2>> hist(prime + 1, {0, 0});
    for (auto& r : rx) r->reset();
    std::vector<bool> bits(tx.size());
    for (u32 round = 0; round < kRounds; ++round) {
        for (std::size_t i = 0; i < tx.size(); ++i) {
            bits[i] = rng.next() & 1;
            if (bits[i]) signal(tx[i], cpu);
        }
        for (std::size_t i = 0; i < rx.size(); ++i) ++hist[std::min(rx[i]->check().misses, prime)][bits[i]];
    }
    u32 best = 1;
    u64 best_err = ~0ull;
    for (u32 th = 1; th <= prime; ++th) {
        u64 err = 0;
        for (u32 k = 0; k <= prime; ++k) err += k >= th ? hist[k][0] : hist[k][1];
        if (err < best_err) {
            best_err = err;
            best = th;
        }
    }
    for (auto& r : rx) static_cast<PrimeProbe&>(*r).set_min_misses(best);
}

std::vector<PAddr> ChannelBinding::data_sets() const {
    std::vector<PAddr> out;
    for (VAddr v : data_lines_) out.push_back(*sender_.phys(v));
    return out;
}

void ChannelBinding::signal(const Signal& s, Cpu& cpu) {
    if (kind_ == ProbeKind::prime_probe) run_strategy(strategy_, s.set, cpu);
    else cpu.read(s.line);
}

// ---------------------------------------------------------------- session

CovertSession::CovertSession(ChannelBinding& binding, std::span<const u8> data, const ChannelOptions& opt)
    : b_(binding), m_(binding.sender().machine()), opt_(opt), data_(data.begin(), data.end()),
      noise_(mix_seed(opt.seed, 11)) {
    if (opt.packet_bytes < 4) throw SimError("config", "packets need at least one payload byte");
    if (opt.packet_bytes * 8 != b_.data_bits()) throw SimError("config", "binding width does not match packet size");
    if (opt.noise < 0 || opt.noise > 1) throw SimError("config", "noise must be a probability");
    std::size_t n = opt.packet_bytes - 3;
    for (std::size_t i = 0; i < data_.size(); i += n) {
        std::vector<u8> chunk(n, 0);
        std::copy_n(data_.begin() + i, std::min(n, data_.size() - i), chunk.begin());
        payloads_.push_back(std::move(chunk));
    }
    st_.technique = to_string(b_.kind());
    st_.packet_bytes = opt.packet_bytes;
}

bool CovertSession::noisy() { return noise_.chance(opt_.noise); }

Task CovertSession::sender_task() {
    Cpu& c = b_.sender();
    std::size_t idx = 0;
    u8 seq = 0;
    u64 stall = 0;
    bool fresh = true;
    std::vector<bool> bits;
    while (idx < payloads_.size()) {
        if (fresh) {
            Cpu::Call frame(c, c.code_page(1));
            c.compute(opt_.packet_bytes * 4);
            bits = to_bits(Packet::make(payloads_[idx], seq).bytes());
            ++st_.packets;
            fresh = false;
        } else {
            ++st_.retransmissions;
        }
        for (u32 i = 0; i < bits.size(); ++i)
            if (bits[i]) b_.send_data(i);
        st_.wire_bits += bits.size();
        wire_ = bits;
        wire_fresh_ = true;
        co_await c.yield();

        u16 word = 0;
        {
            Cpu::Call check(c, c.code_page(2));
            for (u32 i = 0; i < kAckBits; ++i) {
                bool v = b_.ack_monitor(i).check().hit;
                if (noisy()) v = !v;
                word = static_cast<u16>((word << 1) | v);
            }
        }
        auto ack = decode_ack(word);
        if (ack && *ack == seq) {
            ++idx;
            ++seq;
            stall = 0;
            fresh = true;
        } else if (++stall > opt_.idle_budget) {
            throw SimError("deadlock_timeout", "no acknowledgment for packet " + std::to_string(idx));
        }
    }
    done_ = true;
}

Task CovertSession::receiver_task() {
    Cpu& c = b_.receiver();
    u32 nbits = b_.data_bits();
    u8 expected = 0;
    std::size_t accepted = 0;
    std::vector<bool> bits(nbits);
    while (!done_) {
        PerfCounters before = c.counters();
        for (u32 i = 0; i < nbits; ++i) bits[i] = b_.data_monitor(i).check().hit;
        st_.receiver_data_path += c.counters() - before;
        for (u32 i = 0; i < nbits; ++i)
            if (noisy()) bits[i] = !bits[i];
        ++st_.rounds;
        if (wire_fresh_) {
            st_.raw_bits += nbits;
            for (u32 i = 0; i < nbits; ++i) st_.raw_bit_errors += bits[i] != wire_[i];
            wire_fresh_ = false;
        }

        std::vector<u8> bytes = from_bits(bits);
        for (std::size_t k = 0; k < bytes.size(); ++k) {
            Cpu::Call parse(c, c.code_page(1));
            c.compute(4);
        }
        Packet p = Packet::parse(bytes);
        bool ok;
        {
            Cpu::Call crc(c, c.code_page(2));
            c.compute(opt_.packet_bytes * 4);
            ok = p.valid();
        }
        bool ack = false;
        if (!ok) {
            ++st_.crc_rejects;
        } else if (p.seq == expected) {
            if (accepted >= payloads_.size() || p.payload != payloads_[accepted]) ++st_.false_accepts;
            received_.insert(received_.end(), p.payload.begin(), p.payload.end());
            seqs_.push_back(p.seq);
            ++accepted;
            ++expected;
            ack = true;
        } else if (accepted > 0 && p.seq == static_cast<u8>(expected - 1)) {
            ++st_.duplicates;
            ack = true;
        }
        if (ack) {
            Cpu::Call reply(c, c.code_page(3));
            u16 w = encode_ack(p.seq);
            for (u32 i = 0; i < kAckBits; ++i)
                if ((w >> (kAckBits - 1 - i)) & 1) b_.send_ack(i);
        }
        co_await c.yield();
    }
}

ChannelStats CovertSession::run() {
    Cpu& s = b_.sender();
    Cpu& r = b_.receiver();
    PerfCounters s0 = s.counters(), r0 = r.counters();
    Cycles t0 = m_.now();
    for (u32 i = 0; i < kAckBits; ++i) b_.ack_monitor(i).reset();
    for (u32 i = 0; i < b_.data_bits(); ++i) b_.data_monitor(i).reset();
    s.start(sender_task());
    r.start(receiver_task());
    m_.run(opt_.schedule, ~0ull);

    st_.cycles = m_.now() - t0;
    st_.seconds = double(st_.cycles) / (m_.config().clock_ghz * 1e9);
    st_.sender = s.counters() - s0;
    st_.receiver = r.counters() - r0;
    st_.bits_sent = u64(data_.size()) * 8;
    st_.bits_received = u64(received_.size()) * 8;
    st_.transmitted_bits = std::min(st_.bits_sent, st_.bits_received);
    std::size_t n = st_.transmitted_bits / 8;
    for (std::size_t i = 0; i < n; ++i) st_.payload_bit_errors += std::popcount(static_cast<u8>(data_[i] ^ received_[i]));
    st_.capacity_bps = st_.seconds > 0 ? double(st_.transmitted_bits) / st_.seconds : 0.0;
    return st_;
}

ChannelStats transfer(const MachineConfig& cfg, ProbeKind kind, std::span<const u8> data, const ChannelOptions& opt,
                      std::vector<u8>* received) {
    Machine m(cfg);
    unsigned cores = cfg.caches.cores;
    Cpu& s = m.spawn("sender", ActorKind::attacker, 0);
    Cpu& r = m.spawn("receiver", ActorKind::attacker, cores > 1 ? 1 : 0);
    ChannelBinding b(s, r, kind, opt.packet_bytes * 8, opt.calibration_samples);
    CovertSession session(b, data, opt);
    ChannelStats st = session.run();
    if (received) {
        *received = session.received();
        if (received->size() > data.size()) received->resize(data.size());
    }
    return st;
}

std::vector<ChannelStats> measure(const MachineConfig& cfg, ProbeKind kind, u64 bytes, double noise,
                                  const std::vector<u32>& packet_sizes, u64 seed) {
    Rng rng(mix_seed(seed, 5));
    std::vector<u8> data(bytes);
    for (auto& b : data) b = static_cast<u8>(rng.next());
    std::vector<ChannelStats> out;
    for (u32 n : packet_sizes) {
        ChannelOptions opt;
        opt.packet_bytes = n;
        opt.noise = noise;
        opt.seed = seed;
        out.push_back(transfer(cfg, kind, data, opt));
    }
    return out;
}

double per_itlb(u64 events, const PerfCounters& c) {
    u64 itlb = c.itlb_ra + c.itlb_wa;
    if (itlb == 0) throw SimError("no_itlb_events", "actor has no ITLB events to normalize by");
    return double(events) / double(itlb);
}

nlohmann::json ChannelStats::to_json() const {
    nlohmann::json j;
    j["technique"] = technique;
    j["packet_bytes"] = packet_bytes;
    j["bits_sent"] = bits_sent;
    j["bits_received"] = bits_received;
    j["transmitted_bits"] = transmitted_bits;
    j["cycles"] = cycles;
    j["capacity_bps"] = capacity_bps;
    j["rounds"] = rounds;
    j["packets"] = packets;
    j["retransmissions"] = retransmissions;
    j["duplicates"] = duplicates;
    j["crc_rejects"] = crc_rejects;
    j["false_accepts"] = false_accepts;
    j["wire_bits"] = wire_bits;
    j["raw_error_rate"] = raw_error_rate();
    j["effective_error_rate"] = effective_error_rate();
    j["sender"] = sender.to_json();
    j["receiver"] = receiver.to_json();
    j["receiver_data_path"] = receiver_data_path.to_json();
    if (sender_stealth) j["sender_stealth"] = *sender_stealth;
    if (receiver_stealth) j["receiver_stealth"] = *receiver_stealth;
    return j;
}

void write_covert_csv(std::ostream& os, const std::vector<ChannelStats>& rows) {
    auto flag = [](const std::optional<bool>& b) { return b ? (*b ? "yes" : "no") : ""; };
    auto norm = [](u64 e, const PerfCounters& c) {
        u64 itlb = c.itlb_ra + c.itlb_wa;
        return itlb ? double(e) / double(itlb) : 0.0;
    };
    os << "technique,packet_size,capacity_kBps,error_rate,sender_references,sender_misses,sender_stealth,"
          "receiver_references,receiver_misses,receiver_stealth\n";
    os << std::fixed;
    for (const auto& r : rows) {
        os << r.technique << ',' << r.packet_bytes << ',' << std::setprecision(3) << r.kilobytes_per_second() << ','
           << std::setprecision(6) << r.effective_error_rate() << ',' << std::setprecision(3)
           << norm(r.sender.cache_references, r.sender) << ',' << norm(r.sender.cache_misses, r.sender) << ','
           << flag(r.sender_stealth) << ',' << norm(r.receiver.cache_references, r.receiver) << ','
           << norm(r.receiver.cache_misses, r.receiver) << ',' << flag(r.receiver_stealth) << '\n';
    }
    os.unsetf(std::ios::fixed);
}

}  // namespace memsim
