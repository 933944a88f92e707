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
#include <vector>

#include "memsim/config.hpp"
#include "memsim/eviction.hpp"
#include "memsim/machine.hpp"

using namespace memsim;

namespace {

// The eviction loop written out literally:
//   for (s = 0; s <= S-D; s += L) for (c < C) for (d < D) *a[s+d];
std::vector<u32> loop_oracle(u32 C, u32 D, u32 L, u32 S) {
    std::vector<u32> out;
    for (int s = 0; s <= int(S) - int(D); s += int(L))
        for (u32 c = 0; c < C; ++c)
            for (u32 d = 0; d < D; ++d) out.push_back(u32(s) + d);
    return out;
}

struct Pool {
    Machine m;
    Cpu& cpu;
    VAddr base;
    std::vector<VAddr> candidates;

    explicit Pool(const std::string& preset)
        : m(machine_preset(preset)), cpu(m.spawn("attacker", ActorKind::attacker, 0)) {
        base = m.os().mmap(cpu.space(), 64ull << 20, PageSize::m2);
        for (VAddr v = base + 0x40 + (1u << 17); v < base + (64ull << 20); v += 1u << 17) candidates.push_back(v);
    }
    VAddr target() const { return base + 0x40; }
};

}  // namespace

TEST_CASE("access counts") {
    CHECK(access_count({2, 2, 1, 17}) == 64);
    CHECK(access_count({5, 2, 2, 18}) == 90);
    CHECK(access_count({4, 5, 5, 17}) == 60);
    CHECK(access_count({4, 5, 5, 20}) == 80);
    CHECK(access_count({3, 2, 2, 18}) == 54);
    CHECK(access_count({1, 1, 1, 16}) == 16);

    std::vector<u32> seq(16);
    for (u32 i = 0; i < 16; ++i) seq[i] = i;
    CHECK(access_pattern({1, 1, 1, 16}) == seq);

    for (u32 C = 1; C <= 4; ++C)
        for (u32 S = 1; S <= 20; ++S)
            for (u32 D = 1; D <= std::min(S, 4u); ++D)
                for (u32 L = 1; L <= D; ++L) {
                    EvictionStrategy s{C, D, L, S};
                    auto want = loop_oracle(C, D, L, S);
                    CHECK(access_pattern(s) == want);
                    CHECK(access_count(s) == want.size());
                }
}

TEST_CASE("strategy validation") {
    CHECK_THROWS_AS(access_count({1, 1, 1, 0}), SimError);
    CHECK_THROWS_AS(access_count({0, 1, 1, 4}), SimError);
    CHECK_THROWS_AS(access_count({1, 5, 1, 4}), SimError);
    CHECK_THROWS_AS(access_count({1, 2, 3, 4}), SimError);
    CHECK(EvictionStrategy{2, 2, 1, 17}.name() == "P-2-2-1-17");
}

TEST_CASE("canonical patterns") {
    CHECK(canonical_pattern({5, 5, 3, 9, 3}) == std::vector<u32>{0, 0, 1, 2, 1});
    // D = L = 1 repeated C times is the same as D = 1 with a single access stride
    CHECK(canonical_pattern(access_pattern({1, 2, 2, 8})) == canonical_pattern(access_pattern({1, 1, 1, 8})));
    CHECK(canonical_pattern(access_pattern({2, 2, 1, 8})) != canonical_pattern(access_pattern({1, 1, 1, 8})));
}

TEST_CASE("run_strategy counts accesses") {
    Pool p("lru16");
    EvictionSet set{p.target(), {p.candidates.begin(), p.candidates.begin() + 20}};
    for (EvictionStrategy s : {EvictionStrategy{2, 2, 1, 17}, EvictionStrategy{5, 2, 2, 18}, EvictionStrategy{4, 5, 5, 17}}) {
        auto st = run_strategy(s, set, p.cpu);
        CHECK(st.accesses == access_count(s));
        CHECK(st.hits + st.misses == st.accesses);
    }
    EvictionSet tiny{p.target(), {p.candidates[0]}};
    CHECK_THROWS_AS(run_strategy({1, 1, 1, 4}, tiny, p.cpu), SimError);
}

TEST_CASE("steady-state eviction rates") {
    SUBCASE("lru full sweep evicts") {
        auto cfg = machine_preset("lru16");
        auto r = evaluate_strategy(cfg.caches, {1, 1, 1, 16}, 2000, 1);
        CHECK(r.eviction_rate == 1.0);
        auto short_set = evaluate_strategy(cfg.caches, {1, 1, 1, 15}, 2000, 1);
        CHECK(short_set.eviction_rate == 0.0);
    }
    SUBCASE("repetition beats a single pass on random replacement") {
        auto cfg = machine_preset("random16");
        auto single = evaluate_strategy(cfg.caches, {1, 1, 1, 17}, 20000, 1);
        auto rep = evaluate_strategy(cfg.caches, {2, 2, 1, 17}, 20000, 1);
        CHECK(single.eviction_rate < rep.eviction_rate);
    }
    SUBCASE("zero trials rejected") {
        CHECK_THROWS_AS(evaluate_strategy(machine_preset("lru16").caches, {1, 1, 1, 16}, 0, 1), SimError);
    }
}

TEST_CASE("explore ranking") {
    ExploreOptions o;
    o.max_c = o.max_d = o.max_l = 2;
    o.sizes = {16};
    o.trials = 2000;
    auto rows = explore(machine_preset("lru16").caches, o);
    REQUIRE(!rows.empty());
    double best = 0;
    bool single_found = false;
    for (const auto& r : rows) best = std::max(best, r.eviction_rate);
    for (const auto& r : rows)
        if (r.strategy == EvictionStrategy{1, 1, 1, 16}) {
            single_found = true;
            CHECK(r.eviction_rate == best);
        }
    CHECK(single_found);
    for (std::size_t i = 1; i < rows.size(); ++i) CHECK(!rank_before(rows[i], rows[i - 1], o.threshold));

    std::ostringstream os;
    write_strategy_csv(os, rows);
    CHECK(os.str().rfind("C,D,L,S", 0) == 0);
}

TEST_CASE("static eviction sets") {
    Pool p("sandy");
    auto set = build_eviction_set_static(p.cpu, p.target(), p.base, 64ull << 20, 12);
    CHECK(set.members.size() == 12);
    auto& h = p.m.caches();
    PAddr t = *p.cpu.phys(p.target());
    for (VAddr v : set.members) {
        PAddr q = *p.cpu.phys(v);
        CHECK(h.llc_set(q) == h.llc_set(t));
        CHECK(h.llc_slice(q) == h.llc_slice(t));
        CHECK((q >> 6) != (t >> 6));
    }
    VAddr one = p.m.os().mmap(p.cpu.space(), kPage);
    CHECK_THROWS_AS(build_eviction_set_static(p.cpu, p.target(), one, kPage, 12), SimError);
}

TEST_CASE("dynamic eviction sets") {
    SUBCASE("lru converges to the associativity") {
        Pool p("lru16");
        DynamicOptions o;
        auto r = build_eviction_set_dynamic(p.cpu, p.target(), p.candidates, o);
        CHECK(r.set.members.size() == 16);
        CHECK(r.rate == 1.0);
        auto audit = audit_minimality(p.cpu, r, p.candidates, o);
        CHECK(audit.removals > 0);
        CHECK(audit.violations == 0);
    }
    SUBCASE("threshold 0 accepts the empty set") {
        Pool p("lru16");
        DynamicOptions o;
        o.threshold = 0;
        auto r = build_eviction_set_dynamic(p.cpu, p.target(), p.candidates, o);
        CHECK(r.set.members.empty());
    }
    SUBCASE("identical inputs, identical sets") {
        Pool a("random16"), b("random16");
        DynamicOptions o;
        o.tests_per_decision = 4;
        auto ra = build_eviction_set_dynamic(a.cpu, a.target(), a.candidates, o);
        auto rb = build_eviction_set_dynamic(b.cpu, b.target(), b.candidates, o);
        CHECK(ra.set.members == rb.set.members);
        CHECK(ra.pattern == rb.pattern);
    }
}
