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

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "memsim/config.hpp"
#include "memsim/scenarios.hpp"

using namespace memsim;

TEST_CASE("presets") {
    auto names = machine_presets();
    for (const char* want : {"sandy", "ivy", "haswell", "skylake", "cortex-a53", "lru16", "random16"})
        CHECK(std::find(names.begin(), names.end(), want) != names.end());
    for (const auto& n : names) {
        CAPTURE(n);
        auto c = machine_preset(n);
        CHECK_NOTHROW(c.validate());
        // JSON round trip is lossless
        CHECK(to_json(machine_from_json(to_json(c))) == to_json(c));
    }
    CHECK_THROWS_AS(machine_preset("no_such_preset"), SimError);
    try {
        load_machine("no_such_preset");
    } catch (const SimError& e) {
        CHECK(e.code() == "config");
    }
}

TEST_CASE("json configs override a base preset") {
    auto path = std::filesystem::temp_directory_path() / "memsim_test_cfg.json";
    {
        std::ofstream f(path);
        f << R"({"base": "random16", "jitter_sigma": 2.5, "refresh": {"multiplier": 0.5}})";
    }
    auto c = load_machine(path.string());
    CHECK(c.jitter_sigma == 2.5);
    CHECK(c.refresh.multiplier == 0.5);
    CHECK(c.caches.llc.policy == Policy::random);
    {
        std::ofstream f(path);
        f << "{ not json";
    }
    CHECK_THROWS_AS(load_machine(path.string()), SimError);
    {
        std::ofstream f(path);
        f << R"({"llc": {"sets": 1000}})";
    }
    CHECK_THROWS_AS(load_machine(path.string()), SimError);
    std::filesystem::remove(path);
}

TEST_CASE("report formats") {
    auto rows = csv_to_json("a,b,c\n1,2.5,x\n-3,,y\n");
    REQUIRE(rows.size() == 2);
    CHECK(rows[0]["a"] == 1);
    CHECK(rows[0]["b"] == 2.5);
    CHECK(rows[0]["c"] == "x");
    CHECK(rows[1]["a"] == -3);

    Report r;
    r.name = "demo";
    r.tables.emplace_back("t1", "x,y\n1,2\n");
    r.summary["k"] = 1;
    r.expect(true, "fine");
    CHECK(r.ok());
    r.expect(false, "broken");
    CHECK(!r.ok());
    CHECK(r.csv() == "# t1\nx,y\n1,2\n");
    auto j = r.json();
    CHECK(j["scenario"] == "demo");
    CHECK(j["tables"]["t1"][0]["y"] == 2);
    CHECK(j["failures"][0] == "broken");
}

TEST_CASE("unknown scenario") {
    try {
        run_scenario("nope", machine_preset("sandy"), {});
        FAIL("no error");
    } catch (const SimError& e) {
        CHECK(e.code() == "config");
    }
}

TEST_CASE("ranking with tolerance") {
    StrategyReport a, b;
    a.eviction_rate = 0.996;
    a.mean_cycles = 100;
    b.eviction_rate = 0.999;
    b.mean_cycles = 300;
    // both within 0.005 of the capped rate: the faster wins
    CHECK(ranks_above(a, b, 0.9975, 0.005));
    CHECK(!ranks_above(b, a, 0.9975, 0.005));
    b.eviction_rate = 0.9;
    b.mean_cycles = 10;
    CHECK(ranks_above(a, b, 0.9975, 0.005));
    CHECK(repeated_access({2, 1, 1, 16}));
    CHECK(repeated_access({1, 2, 1, 16}));
    CHECK(!repeated_access({1, 1, 1, 16}));
}

TEST_CASE("dedup write timing") {
    auto d = dedup_attack(machine_preset("sandy"), 16, 1);
    CHECK(d.probes.size() == 32);
    CHECK(d.merges == 16);
    CHECK(d.plain_latency > 0);
    for (const auto& p : d.probes) {
        CAPTURE(p.page);
        if (p.merged) CHECK(p.latency >= 10 * d.plain_latency);
        else CHECK(p.latency < 10 * d.plain_latency);
    }
}

TEST_CASE("randomized layouts") {
    for (u64 seed = 1; seed <= 3; ++seed) {
        CAPTURE(seed);
        auto c = check_layout(machine_preset("sandy"), seed);
        CHECK(c.match);
        CHECK(c.alias_unique);
        CHECK(c.isolated_clean);
        CHECK(c.probes > 0);
    }
}

TEST_CASE("scenario reports are deterministic") {
    auto cfg = machine_preset("sandy");
    ScenarioOptions o;
    o.layouts = 2;
    o.bytes = 256;
    o.keys = 1;
    o.trials = 100;
    for (const char* name : {"dedup_demo", "oracle_suite", "covert_bench", "template"}) {
        CAPTURE(name);
        auto a = run_scenario(name, cfg, o);
        auto b = run_scenario(name, cfg, o);
        CHECK(a.ok());
        CHECK(a.csv() == b.csv());
        CHECK(a.json().dump() == b.json().dump());
    }
}
