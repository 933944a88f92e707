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

// memsim: runs the experiments and writes their tables.
//
// Exit status: 0 success, 2 configuration or usage error, 3 a --check assertion
// failed, 1 anything else.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "memsim/config.hpp"
#include "memsim/scenarios.hpp"

namespace fs = std::filesystem;
using namespace memsim;

namespace {

struct Common {
    std::string machine = "sandy";
    u64 seed = 1;
    std::string out;
    std::string format = "csv";
    bool check = false;
};

void add_common(CLI::App* sc, Common& c, const std::string& default_machine = "sandy") {
    c.machine = default_machine;
    sc->add_option("--machine", c.machine, "preset name or JSON config path")->capture_default_str();
    sc->add_option("--seed", c.seed, "experiment seed")->capture_default_str();
    sc->add_option("--out", c.out, "output directory (default: standard output)");
    sc->add_option("--format", c.format, "csv or json")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
    sc->add_flag("--check", c.check, "exit 3 if the experiment's assertions fail");
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw SimError("io", "cannot write " + p.string());
    f << text;
}

int emit(const Report& r, const Common& c) {
    if (c.out.empty()) {
        if (c.format == "json") std::cout << r.json().dump(2) << '\n';
        else std::cout << r.csv();
    } else {
        fs::create_directories(c.out);
        if (c.format == "json") {
            write_file(fs::path(c.out) / (r.name + ".json"), r.json().dump(2) + "\n");
        } else {
            for (const auto& [stem, text] : r.tables) write_file(fs::path(c.out) / (stem + ".csv"), text);
            write_file(fs::path(c.out) / (r.name + "_summary.json"), r.summary.dump(2) + "\n");
        }
    }
    for (const auto& f : r.failures) std::cerr << "check failed: " << f << '\n';
    return c.check && !r.ok() ? 3 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"memsim: cache, DRAM and translation side-channel simulator"};
    app.require_subcommand(1);

    std::string scenario;
    ScenarioOptions so;
    Common run_c, ex_c, cv_c, tp_c, rh_c, dt_c, or_c, dd_c;

    auto* run = app.add_subcommand("run", "run a named scenario");
    run->add_option("scenario", scenario, "scenario name")->required()->check(CLI::IsMember(scenario_names()));
    run->add_option("--noise", so.noise, "symbol noise for covert_bench");
    run->add_option("--bytes", so.bytes, "payload bytes for covert scenarios");
    add_common(run, run_c);

    auto* ex = app.add_subcommand("explore", "rank eviction strategies");
    ex->add_option("--trials", so.trials, "Monte Carlo trials per strategy (default 100000)");
    add_common(ex, ex_c, "random16");

    auto* cv = app.add_subcommand("covert", "covert channel benchmark");
    cv->add_option("--noise", so.noise, "probability of flipping each received symbol")->check(CLI::Range(0.0, 1.0));
    cv->add_option("--bytes", so.bytes, "payload bytes per transfer")->capture_default_str();
    add_common(cv, cv_c);

    auto* tp = app.add_subcommand("template", "cache template attack and AES nibble recovery");
    tp->add_option("--keys", so.keys, "random AES keys (default 5)");
    tp->add_option("--trials", so.trials, "exploitation windows (default 1000)");
    add_common(tp, tp_c);

    auto* rh = app.add_subcommand("rowhammer", "refresh sweep, soundness audit and PTE spray");
    add_common(rh, rh_c);

    auto* dt = app.add_subcommand("detect", "performance-counter detection over the scenario suite");
    dt->add_option("--bytes", so.bytes, "payload bytes per covert transfer")->capture_default_str();
    add_common(dt, dt_c);

    auto* orc = app.add_subcommand("oracles", "prefetch translation and direct-map oracles");
    orc->add_option("--layouts", so.layouts, "randomized layouts (default 10)");
    add_common(orc, or_c);

    auto* dd = app.add_subcommand("dedup", "page deduplication write-timing attack");
    add_common(dd, dd_c);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    struct Choice {
        CLI::App* sc;
        Common* c;
        std::string name;
    };
    const Choice choices[] = {{run, &run_c, ""},
                              {ex, &ex_c, "explore_evictions"},
                              {cv, &cv_c, "covert_bench"},
                              {tp, &tp_c, "template"},
                              {rh, &rh_c, "rowhammer_sweep"},
                              {dt, &dt_c, "detect_suite"},
                              {orc, &or_c, "oracle_suite"},
                              {dd, &dd_c, "dedup_demo"}};
    try {
        for (const auto& ch : choices) {
            if (!ch.sc->parsed()) continue;
            MachineConfig cfg = load_machine(ch.c->machine);
            cfg.validate();
            so.seed = ch.c->seed;
            Report r = run_scenario(ch.name.empty() ? scenario : ch.name, cfg, so);
            return emit(r, *ch.c);
        }
    } catch (const SimError& e) {
        std::cerr << "memsim: " << e.what() << '\n';
        return e.code() == "config" ? 2 : 1;
    } catch (const std::exception& e) {
        std::cerr << "memsim: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
