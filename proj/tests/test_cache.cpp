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

#include <cmath>
#include <vector>

#include "memsim/cache.hpp"
#include "memsim/config.hpp"

using namespace memsim;

namespace {

// Bit-by-bit parity, independent of std::popcount.
unsigned slow_parity(u64 x) {
    unsigned p = 0;
    for (int b = 0; b < 64; ++b) p ^= (x >> b) & 1;
    return p;
}

HierarchyConfig small_l1(u32 ways) {
    HierarchyConfig h;
    h.cores = 2;
    h.l1 = CacheGeometry{64, 64, ways, 1, Addressing::pipt, Inclusion::inclusive, 1, Policy::lru, 0};
    h.l2.reset();
    h.llc = CacheGeometry{64, 2048, 16, 3, Addressing::pipt, Inclusion::inclusive, 1, Policy::lru, 0};
    return h;
}

}  // namespace

TEST_CASE("set index") {
    CacheGeometry g{64, 2048, 16, 3, Addressing::pipt, Inclusion::inclusive, 1, Policy::lru, 0};
    CHECK(set_index(0x0, g) == 0);
    CHECK(set_index(0x1040, g) == 65);
    // bits at or above offset+index bits do not matter
    for (u64 hi : {1ull << 17, 1ull << 20, 0xabcull << 30}) CHECK(set_index(0x1040 | hi, g) == 65);
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        u64 a = rng.next() & ((1ull << 40) - 1);
        CHECK(set_index(a, g) == ((a >> 6) & 2047));
    }
}

TEST_CASE("slice hash") {
    SliceHash one{{1ull << 17}};
    CHECK(slice_of(0x0, one) == 0);
    CHECK(slice_of(0x20000, one) == 1);

    // bit 20 belongs to both masks, so toggling it flips both output bits
    SliceHash four{{(1ull << 17) | (1ull << 20) | (1ull << 23), (1ull << 18) | (1ull << 20) | (1ull << 25)}};
    Rng rng(5);
    for (int i = 0; i < 16; ++i) {
        u64 p = rng.next() & ((1ull << 34) - 1);
        unsigned want = slow_parity(p & four.masks[0]) | (slow_parity(p & four.masks[1]) << 1);
        CHECK(slice_of(p, four) == want);
        CHECK(slice_of(p ^ (1ull << 20), four) == (want ^ 3u));
    }

    // the sandy preset uses one mask over 2 slices
    auto cfg = machine_preset("sandy");
    for (int i = 0; i < 64; ++i) {
        u64 p = rng.next() & ((1ull << 30) - 1);
        CHECK(slice_of(p, cfg.caches.slice_hash) == slow_parity(p & cfg.caches.slice_hash.masks[0]));
    }
}

TEST_CASE("victim selection") {
    Rng rng(1);
    SUBCASE("lru picks the oldest") {
        std::vector<WayMeta> set(4);
        for (unsigned w = 0; w < 4; ++w) set[w].stamp = 10 + w;
        CHECK(choose_victim(set, Policy::lru, rng) == 0);
        set[0].stamp = 20;
        CHECK(choose_victim(set, Policy::lru, rng) == 1);
    }
    SUBCASE("random is reproducible") {
        std::vector<WayMeta> set(16);
        Rng a(9), b(9);
        for (int i = 0; i < 100; ++i) CHECK(choose_victim(set, Policy::random, a) == choose_victim(set, Policy::random, b));
    }
    SUBCASE("random survival 15/16") {
        std::vector<WayMeta> set(16);
        int survived = 0;
        const int n = 100000;
        for (int i = 0; i < n; ++i) survived += choose_victim(set, Policy::random, rng) != 5;
        CHECK(std::abs(double(survived) / n - 0.9375) <= 0.01);
    }
    SUBCASE("quad age prefers age 0") {
        std::vector<WayMeta> set(4);
        for (auto& m : set) m.age = 3;
        set[2].age = 1;
        CHECK(choose_victim(set, Policy::quad_age, rng) == 2);
    }
}

TEST_CASE("hierarchy basics") {
    auto cfg = machine_preset("sandy");
    CacheHierarchy h(cfg.caches, 1);
    const auto& lat = cfg.caches.lat;

    SUBCASE("miss then hit") {
        auto a = h.access(0x12340, 0);
        CHECK(a.level == HitLevel::dram);
        auto b = h.access(0x12340, 0);
        CHECK(b.level == HitLevel::l1);
        CHECK(b.latency == lat.l1_hit);
        CHECK(a.latency > b.latency);
    }
    SUBCASE("other core is faster than memory") {
        auto miss = h.access(0x40000, 0);
        auto r = h.access(0x40000, 1);
        CHECK((r.level == HitLevel::l3 || r.level == HitLevel::remote));
        CHECK(r.latency < miss.latency);
    }
    SUBCASE("flush latency") {
        const u64 p = 0x80000;
        CHECK(h.flush(p, h.llc_slice(p)) == lat.flush_base);
        h.access(p, 0);
        CHECK(h.flush(p, h.llc_slice(p)) == lat.flush_base + 12);
        CHECK(lat.flush_hit_extra == 12u);
        h.access(p, 0);
        unsigned remote = h.llc_slice(p) ^ 1u;
        CHECK(h.flush(p, remote) == lat.flush_base + 12 + 3);
        CHECK(!h.cached(p));
    }
    SUBCASE("inclusion survives heavy traffic") {
        Rng rng(2);
        for (int i = 0; i < 200000; ++i) h.access((rng.below(1u << 16)) * 64, static_cast<unsigned>(rng.below(2)));
        CHECK(h.check_inclusion());
    }
    SUBCASE("llc eviction back-invalidates") {
        // 13 lines in one LLC set and slice evict the first from every level
        const u64 stride = 2048ull * 64;
        std::vector<u64> same;
        for (u64 p = 0x1000000; same.size() < 13; p += stride)
            if (h.llc_slice(p) == h.llc_slice(0x1000000)) same.push_back(p);
        for (u64 p : same) h.access(p, 0);
        CHECK(!h.cached(same[0]));
        CHECK(h.check_inclusion());
    }
}

TEST_CASE("lru worst case") {
    CacheHierarchy h(small_l1(4), 1);
    std::vector<u64> lines;
    for (u64 i = 0; i < 5; ++i) lines.push_back(0x100000 + i * 64 * 64);
    for (u64 p : lines) h.access(p, 0);
    int l1_hits = 0;
    for (int round = 0; round < 20; ++round)
        for (u64 p : lines) l1_hits += h.access(p, 0).level == HitLevel::l1;
    CHECK(l1_hits == 0);
}

TEST_CASE("snapshot restore replays") {
    auto cfg = machine_preset("random16");
    CacheHierarchy h(cfg.caches, 4);
    std::vector<PAddr> lines;
    for (u64 i = 0; i < 40; ++i) lines.push_back(0x200000 + i * 2048 * 64);
    for (auto p : lines) h.access(p, 0);
    auto snap = h.snapshot(lines);
    std::vector<int> first, second;
    for (auto p : lines) first.push_back(static_cast<int>(h.access(p, 0).level));
    h.restore(snap);
    for (auto p : lines) second.push_back(static_cast<int>(h.access(p, 0).level));
    CHECK(first == second);
}
