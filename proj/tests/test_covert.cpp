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

#include <doctest.h>

#include <sstream>
#include <string>
#include <vector>

#include "memsim/config.hpp"
#include "memsim/covert.hpp"

using namespace memsim;

namespace {

// Polynomial long division over the bit string: message followed by 16 zero
// bits, with the first 16 bits complemented for the 0xffff initial value.
u16 crc16_by_division(std::span<const u8> msg) {
    std::vector<int> bits;
    for (u8 b : msg)
        for (int i = 7; i >= 0; --i) bits.push_back((b >> i) & 1);
    bits.resize(bits.size() + 16, 0);
    for (int i = 0; i < 16; ++i) bits[i] ^= 1;
    const int poly[17] = {1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};  // x^16 + x^12 + x^5 + 1
    for (std::size_t i = 0; i + 16 < bits.size(); ++i)
        if (bits[i])
            for (int k = 0; k < 17; ++k) bits[i + k] ^= poly[k];
    u16 r = 0;
    for (std::size_t i = bits.size() - 16; i < bits.size(); ++i) r = static_cast<u16>((r << 1) | bits[i]);
    return r;
}

std::vector<u8> random_bytes(std::size_t n, u64 seed) {
    Rng rng(seed);
    std::vector<u8> v(n);
    for (auto& b : v) b = static_cast<u8>(rng.next());
    return v;
}

}  // namespace

TEST_CASE("crc16") {
    CHECK(crc16({}) == 0xffff);
    const std::string check = "123456789";
    std::vector<u8> c(check.begin(), check.end());
    CHECK(crc16_by_division(c) == 0x29b1);
    CHECK(crc16(c) == 0x29b1);
    u8 zero[1] = {0};
    CHECK(crc16(zero) == crc16_by_division(zero));
    for (u64 s = 0; s < 200; ++s) {
        auto v = random_bytes(s % 40, s);
        CHECK(crc16(v) == crc16_by_division(v));
    }
}

TEST_CASE("ack words") {
    for (unsigned s = 0; s < 256; ++s) {
        u16 w = encode_ack(static_cast<u8>(s));
        CHECK(decode_ack(w) == static_cast<u8>(s));
        // any single flipped bit is caught
        for (int b = 0; b < 16; ++b) CHECK(!decode_ack(static_cast<u16>(w ^ (1u << b))));
    }
}

TEST_CASE("packets") {
    auto payload = random_bytes(25, 1);
    Packet p = Packet::make(payload, 9);
    CHECK(p.size() == 28);
    CHECK(p.valid());
    auto bytes = p.bytes();
    REQUIRE(bytes.size() == 28);
    CHECK(bytes[25] == 9);
    std::vector<u8> covered(bytes.begin(), bytes.begin() + 26);
    CHECK(((u16(bytes[26]) << 8) | bytes[27]) == crc16(covered));
    Packet q = Packet::parse(bytes);
    CHECK(q.payload == payload);
    CHECK(q.seq == 9);
    CHECK(q.valid());
    bytes[3] ^= 0x10;
    CHECK(!Packet::parse(bytes).valid());

    auto bits = to_bits(p.bytes());
    CHECK(bits.size() == 28 * 8);
    CHECK(from_bits(bits) == p.bytes());
    std::vector<u8> one{0x80};
    CHECK(to_bits(one)[0]);
}

TEST_CASE("noiseless transfers") {
    auto cfg = machine_preset("sandy");
    auto data = random_bytes(1024, 3);
    for (ProbeKind k : {ProbeKind::flush_flush, ProbeKind::flush_reload, ProbeKind::prime_probe}) {
        CAPTURE(to_string(k));
        for (u32 n : {28u, 5u}) {
            ChannelOptions o;
            o.packet_bytes = n;
            std::vector<u8> got;
            auto st = transfer(cfg, k, data, o, &got);
            REQUIRE(got.size() >= data.size());
            CHECK(std::equal(data.begin(), data.end(), got.begin()));
            CHECK(st.effective_error_rate() == 0.0);
            CHECK(st.raw_bit_errors == 0);
            CHECK(st.crc_rejects == 0);
            CHECK(st.retransmissions == 0);
            // every packet crosses the wire exactly once
            u64 packets = (data.size() + n - 4) / (n - 3);
            CHECK(st.packets == packets);
            CHECK(st.wire_bits == packets * 8 * n);
            CHECK(st.capacity_bps > 0);
            if (k == ProbeKind::flush_flush) CHECK(st.receiver_data_path.cache_misses == 0);
        }
    }
}

TEST_CASE("sequence numbers") {
    auto cfg = machine_preset("sandy");
    cfg.seed = 5;
    Machine m(cfg);
    Cpu& s = m.spawn("sender", ActorKind::attacker, 0);
    Cpu& r = m.spawn("receiver", ActorKind::attacker, 1);
    ChannelBinding b(s, r, ProbeKind::flush_flush, 5 * 8);
    auto data = random_bytes(2000, 8);
    ChannelOptions o;
    o.packet_bytes = 5;
    o.noise = 0.01;
    CovertSession sess(b, data, o);
    auto st = sess.run();
    const auto& seqs = sess.accepted_seqs();
    REQUIRE(seqs.size() == 1000);
    for (std::size_t i = 0; i < seqs.size(); ++i) CHECK(seqs[i] == static_cast<u8>(i));
    CHECK(st.retransmissions > 0);
    CHECK(st.effective_error_rate() < 0.05);
}

TEST_CASE("capacity ordering") {
    auto cfg = machine_preset("sandy");
    auto rows_ff = measure(cfg, ProbeKind::flush_flush, 512, 0, {28, 4});
    auto rows_fr = measure(cfg, ProbeKind::flush_reload, 512, 0, {28, 4});
    REQUIRE(rows_ff.size() == 2);
    CHECK(rows_ff[0].capacity_bps > rows_ff[1].capacity_bps);
    CHECK(rows_fr[0].capacity_bps > rows_fr[1].capacity_bps);
    CHECK(rows_ff[0].capacity_bps > rows_fr[0].capacity_bps);

    std::ostringstream os;
    write_covert_csv(os, rows_ff);
    CHECK(os.str().rfind("technique,packet_size,capacity_kBps", 0) == 0);
}

TEST_CASE("empty payload") {
    ChannelOptions o;
    auto st = transfer(machine_preset("sandy"), ProbeKind::flush_flush, {}, o);
    CHECK(st.packets == 0);
    CHECK(st.bits_sent == 0);
    CHECK(st.capacity_bps == 0);
}

TEST_CASE("bad options") {
    ChannelOptions o;
    o.packet_bytes = 3;
    auto data = random_bytes(16, 1);
    CHECK_THROWS_AS(transfer(machine_preset("sandy"), ProbeKind::flush_flush, data, o), SimError);
    o.packet_bytes = 28;
    o.noise = 1.5;
    CHECK_THROWS_AS(transfer(machine_preset("sandy"), ProbeKind::flush_flush, data, o), SimError);
}

TEST_CASE("per itlb normalization") {
    PerfCounters c;
    c.itlb_ra = 3;
    c.itlb_wa = 1;
    CHECK(per_itlb(10, c) == doctest::Approx(2.5));
}
