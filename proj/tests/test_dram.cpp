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

#include <map>

#include "memsim/config.hpp"
#include "memsim/dram.hpp"
#include "memsim/machine.hpp"
#include "memsim/rowhammer.hpp"

using namespace memsim;

TEST_CASE("addressing functions") {
    auto fn = dram_fn_preset("sandy_1ch_1dimm");
    CHECK(map_address(0x0, fn) == DramLocation{});

    auto a = map_address(0x2000, fn);
    CHECK(a.bank == 1);
    CHECK(a.rank == 0);
    CHECK(a.channel == 0);
    CHECK(a.dimm == 0);

    auto b = map_address(0x22000, fn);
    CHECK(b.bank == 0);

    // hand oracle: BA0 = b13^b17, BA1 = b14^b18, BA2 = b15^b19, rank = b16
    CHECK(fn.bank.size() == 3);
    CHECK(fn.bank[0] == mask_of_bits({13, 17}));
    CHECK(fn.bank[1] == mask_of_bits({14, 18}));
    CHECK(fn.bank[2] == mask_of_bits({15, 19}));
    CHECK(fn.rank.size() == 1);
    CHECK(fn.rank[0] == mask_of_bits({16}));
    Rng rng(11);
    for (int i = 0; i < 200; ++i) {
        u64 p = rng.next() & ((1ull << 30) - 1);
        auto bit = [&](int k) { return unsigned((p >> k) & 1); };
        auto l = map_address(p, fn);
        unsigned ba = (bit(13) ^ bit(17)) | ((bit(14) ^ bit(18)) << 1) | ((bit(15) ^ bit(19)) << 2);
        CHECK(l.bank == ba);
        CHECK(l.rank == bit(16));
        CHECK(l.row == (p >> 18));
    }

    CHECK_THROWS_AS(dram_fn_preset("nope"), SimError);
    for (const auto& n : dram_fn_presets()) CHECK_NOTHROW(dram_fn_preset(n));
}

TEST_CASE("row buffer") {
    Machine m(machine_preset("sandy"));
    Dram& d = m.dram();

    SUBCASE("hit after open") {
        const u64 p = 0x1234000;
        d.access_row(p, 0);
        CHECK(d.access_row(p + 64, 10).kind == RowOutcome::row_hit);
    }
    SUBCASE("alternating rows conflict") {
        Rng rng(1);
        const u64 r1 = address_in_row(d, 2, 10, rng, m.mem().size());
        const u64 r2 = address_in_row(d, 2, 12, rng, m.mem().size());
        REQUIRE(d.bank_of(r1) == d.bank_of(r2));
        REQUIRE(d.locate(r1).row != d.locate(r2).row);
        d.access_row(r1, 0);
        for (int i = 0; i < 10; ++i) {
            CHECK(d.access_row(i % 2 ? r1 : r2, 100 * (i + 1)).kind == RowOutcome::row_conflict);
        }
    }
    SUBCASE("equal rows in other banks never conflict") {
        const u64 p = 3ull << 18;
        const u64 q = p | (1ull << 13);
        REQUIRE(d.bank_of(p) != d.bank_of(q));
        REQUIRE(d.locate(p).row == d.locate(q).row);
        d.access_row(p, 0);
        d.access_row(q, 1);
        for (int i = 0; i < 10; ++i) CHECK(d.access_row(i % 2 ? p : q, 2 + i).kind == RowOutcome::row_hit);
    }
    SUBCASE("one open row per bank") {
        std::map<u32, i64> open;
        Rng rng(4);
        for (int i = 0; i < 5000; ++i) {
            u64 p = (rng.below(64) << 18) | (rng.below(8) << 13);
            auto l = d.locate(p);
            u32 b = d.bank_of(p);
            RowOutcome want = !open.count(b) ? RowOutcome::row_closed
                              : open[b] == i64(l.row) ? RowOutcome::row_hit
                                                       : RowOutcome::row_conflict;
            open[b] = i64(l.row);
            CHECK(d.access_row(p, Cycles(i)).kind == want);
        }
    }
}

TEST_CASE("flip map") {
    Machine m(machine_preset("sandy"));
    Dram& d = m.dram();
    SUBCASE("no activations, no flips") {
        CHECK(d.refresh_tick(1'000'000).empty());
        CHECK(d.flip_log().empty());
    }
    SUBCASE("threshold met inside one window") {
        const u64 row = 100;
        Rng rng(2);
        PAddr victim = address_in_row(d, 5, row, rng, m.mem().size());
        m.mem().write8(victim, 0xff);
        d.add_flip(FlipEntry{victim, 3, true, 1000, 0, 0});
        PAddr above = address_in_row(d, 5, row - 1, rng, m.mem().size());
        PAddr below = address_in_row(d, 5, row + 1, rng, m.mem().size());
        REQUIRE(d.bank_of(above) == d.bank_of(victim));
        for (int i = 0; i < 499; ++i) {
            d.access_row(above, Cycles(i) * 2);
            d.access_row(below, Cycles(i) * 2 + 1);
        }
        CHECK(d.refresh_tick(1000).empty());
        d.access_row(above, 1000);
        d.access_row(below, 1001);
        auto f = d.refresh_tick(1002);
        REQUIRE(f.size() == 1);
        CHECK(f[0].addr == victim);
        CHECK(f[0].bit == 3);
        CHECK(m.mem().read8(victim) == (0xff ^ 8));
    }
    SUBCASE("counts reset at the row's refresh") {
        const u64 row = 200;
        Rng rng(3);
        PAddr victim = address_in_row(d, 1, row, rng, m.mem().size());
        m.mem().write8(victim, 0xff);
        d.add_flip(FlipEntry{victim, 0, true, 1000, 0, 0});
        PAddr above = address_in_row(d, 1, row - 1, rng, m.mem().size());
        PAddr below = address_in_row(d, 1, row + 1, rng, m.mem().size());
        Cycles t = d.next_refresh(row, 0);
        // 600 activations before the refresh and 600 after: neither window reaches 1000
        for (int i = 0; i < 300; ++i) {
            d.access_row(above, t - 1000 + i);
            d.access_row(below, t - 1000 + i);
        }
        for (int i = 0; i < 300; ++i) {
            d.access_row(above, t + 10 + i);
            d.access_row(below, t + 10 + i);
        }
        CHECK(d.refresh_tick(t + 1000).empty());
        CHECK(d.peak_adjacent(d.bank_of(victim), row) == 600);
    }
    SUBCASE("refresh multiplier scales the window") {
        double w = d.window_cycles();
        d.set_refresh_multiplier(0.5);
        CHECK(d.window_cycles() == doctest::Approx(w / 2));
        CHECK(w == doctest::Approx(64e-3 * 2.6e9));
    }
}
