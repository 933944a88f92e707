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

#include "memsim/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>

namespace memsim {

using nlohmann::json;

namespace {

// Slice masks, output bit o_k at index k.
const std::vector<u64> kSlices2 = {0x15f575440ull};
const std::vector<u64> kSlices4 = {0x35f575440ull, 0x6b5faa880ull};
const std::vector<u64> kSlices8 = {0x1b5f575400ull, 0x2eb5faa880ull, 0x3cccc93100ull};

CacheGeometry l1d() { return {64, 64, 8, 1, Addressing::vipt, Inclusion::inclusive, 1, Policy::lru, 0}; }
CacheGeometry l2p() { return {64, 512, 8, 2, Addressing::pipt, Inclusion::inclusive, 1, Policy::lru, 0}; }

MachineConfig intel(const std::string& name, u32 cores, u32 llc_ways, u32 slices, Policy llc_policy,
                    const std::string& dram_fn, double ghz) {
    MachineConfig c;
    c.name = name;
    c.caches.cores = cores;
    c.caches.l1 = l1d();
    c.caches.l2 = l2p();
    c.caches.llc = {64, 2048, llc_ways, 3, Addressing::pipt, Inclusion::inclusive, slices, llc_policy, 0};
    c.caches.slice_hash.masks = slices == 1 ? std::vector<u64>{}
                                : slices == 2 ? kSlices2
                                : slices == 4 ? kSlices4
                                              : kSlices8;
    c.dram.fn = dram_fn_preset(dram_fn);
    c.dram.rows_per_bank = 1 << 14;
    c.clock_ghz = ghz;
    return c;
}

const std::map<std::string, std::function<MachineConfig()>>& registry() {
    static const std::map<std::string, std::function<MachineConfig()>> r = {
        {"sandy",
         [] {
             auto c = intel("sandy", 2, 12, 2, Policy::lru, "sandy_1ch_1dimm", 2.6);
             c.caches.lat = {4, 12, 29, 100, 200, 3, 150, 12};
             return c;
         }},
        {"ivy",
         [] {
             auto c = intel("ivy", 4, 16, 4, Policy::quad_age, "ivy_haswell_1ch_1dimm", 3.4);
             c.caches.llc.bip_modulus = 32;
             c.caches.lat = {4, 12, 30, 100, 210, 3, 150, 9};
             return c;
         }},
        {"haswell",
         [] {
             auto c = intel("haswell", 4, 16, 4, Policy::quad_age, "ivy_haswell_2ch_2dimm", 3.6);
             c.caches.llc.bip_modulus = 32;
             c.caches.lat = {4, 12, 34, 105, 220, 3, 160, 10};
             return c;
         }},
        {"skylake",
         [] {
             auto c = intel("skylake", 4, 16, 4, Policy::quad_age, "skylake_2ch_1dimm", 4.0);
             c.caches.llc.bip_modulus = 32;
             c.caches.lat = {4, 14, 42, 110, 240, 3, 170, 10};
             return c;
         }},
        {"cortex-a53",
         [] {
             MachineConfig c;
             c.name = "cortex-a53";
             c.caches.cores = 4;
             c.caches.l1 = {64, 128, 4, 1, Addressing::pipt, Inclusion::non_inclusive, 1, Policy::random, 0};
             c.caches.l2.reset();
             c.caches.llc = {64, 512, 16, 3, Addressing::pipt, Inclusion::non_inclusive, 1, Policy::random, 0};
             c.caches.slice_hash.masks = {};
             c.caches.lat = {3, 8, 20, 60, 180, 0, 90, 8};
             c.dram.fn = dram_fn_preset("exynos7420");
             c.dram.rows_per_bank = 1 << 14;
             c.clock_ghz = 1.5;
             return c;
         }},
        {"random16",
         [] {
             auto c = intel("random16", 2, 16, 4, Policy::random, "sandy_1ch_1dimm", 2.6);
             c.caches.lat = {4, 12, 30, 100, 200, 3, 150, 12};
             return c;
         }},
        {"lru16",
         [] {
             auto c = intel("lru16", 2, 16, 4, Policy::lru, "sandy_1ch_1dimm", 2.6);
             c.caches.lat = {4, 12, 30, 100, 200, 3, 150, 12};
             return c;
         }},
    };
    return r;
}

json geom_json(const CacheGeometry& g) {
    static const char* addr[] = {"pipt", "vipt", "vivt"};
    static const char* inc[] = {"inclusive", "non_inclusive", "exclusive"};
    return {{"line_size", g.line_size}, {"sets", g.sets},
            {"ways", g.ways},           {"level", g.level},
            {"addressing", addr[int(g.addressing)]},
            {"inclusion", inc[int(g.inclusion)]},
            {"slices", g.slices},       {"policy", to_string(g.policy)},
            {"bip_modulus", g.bip_modulus}};
}

template <class T>
void get(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void geom_apply(const json& j, CacheGeometry& g) {
    get(j, "line_size", g.line_size);
    get(j, "sets", g.sets);
    get(j, "ways", g.ways);
    get(j, "level", g.level);
    get(j, "slices", g.slices);
    get(j, "bip_modulus", g.bip_modulus);
    if (j.contains("addressing")) g.addressing = parse_addressing(j["addressing"].get<std::string>());
    if (j.contains("inclusion")) g.inclusion = parse_inclusion(j["inclusion"].get<std::string>());
    if (j.contains("policy")) g.policy = parse_policy(j["policy"].get<std::string>());
}

void apply(const json& j, MachineConfig& c) {
    get(j, "name", c.name);
    get(j, "cores", c.caches.cores);
    if (j.contains("l1")) geom_apply(j["l1"], c.caches.l1);
    if (j.contains("l2")) {
        if (j["l2"].is_null()) c.caches.l2.reset();
        else {
            if (!c.caches.l2) c.caches.l2 = l2p();
            geom_apply(j["l2"], *c.caches.l2);
        }
    }
    if (j.contains("llc")) geom_apply(j["llc"], c.caches.llc);
    get(j, "slice_masks", c.caches.slice_hash.masks);
    if (j.contains("latency")) {
        auto& l = j["latency"];
        auto& m = c.caches.lat;
        get(l, "l1_hit", m.l1_hit);
        get(l, "l2_hit", m.l2_hit);
        get(l, "l3_hit", m.l3_hit);
        get(l, "remote_core", m.remote_core);
        get(l, "dram_base", m.dram_base);
        get(l, "remote_slice", m.remote_slice);
        get(l, "flush_base", m.flush_base);
        get(l, "flush_hit_extra", m.flush_hit_extra);
    }
    if (j.contains("prefetcher")) {
        get(j["prefetcher"], "enabled", c.caches.prefetcher.enabled);
        get(j["prefetcher"], "trigger_distance", c.caches.prefetcher.trigger_distance);
    }
    if (j.contains("dram")) {
        auto& d = j["dram"];
        if (d.contains("preset")) c.dram.fn = dram_fn_preset(d["preset"].get<std::string>());
        get(d, "bank_masks", c.dram.fn.bank);
        get(d, "rank_masks", c.dram.fn.rank);
        get(d, "dimm_masks", c.dram.fn.dimm);
        get(d, "channel_masks", c.dram.fn.channel);
        get(d, "row_cutoff", c.dram.fn.row_cutoff);
        get(d, "rows_per_bank", c.dram.rows_per_bank);
        get(d, "row_size", c.dram.row_size);
        get(d, "row_hit", c.dram_latency.row_hit);
        get(d, "row_closed", c.dram_latency.row_closed);
        get(d, "row_conflict", c.dram_latency.row_conflict);
    }
    if (j.contains("refresh")) {
        get(j["refresh"], "window_ms", c.refresh.window_ms);
        get(j["refresh"], "commands", c.refresh.commands);
        get(j["refresh"], "multiplier", c.refresh.multiplier);
    }
    if (j.contains("flips")) {
        get(j["flips"], "density_per_gb", c.flips.density_per_gb);
        get(j["flips"], "seed", c.flips.seed);
        get(j["flips"], "threshold_min", c.flips.threshold_min);
        get(j["flips"], "threshold_max", c.flips.threshold_max);
    }
    if (j.contains("translation_caches")) {
        auto& t = j["translation_caches"];
        get(t, "tlb", c.tcache.tlb);
        get(t, "pde", c.tcache.pde);
        get(t, "pdpte", c.tcache.pdpte);
        get(t, "pml4e", c.tcache.pml4e);
    }
    if (j.contains("prefetch_latency")) {
        auto& p = j["prefetch_latency"];
        get(p, "cached", c.prefetch.cached);
        get(p, "valid_uncached", c.prefetch.valid_uncached);
        get(p, "pte_absent", c.prefetch.pte_absent);
        get(p, "pde_absent", c.prefetch.pde_absent);
        get(p, "pdpte_absent", c.prefetch.pdpte_absent);
        get(p, "pml4e_absent", c.prefetch.pml4e_absent);
    }
    get(j, "clock_ghz", c.clock_ghz);
    get(j, "phys_mem", c.phys_mem);
    get(j, "jitter_sigma", c.jitter_sigma);
    get(j, "seed", c.seed);
    if (j.contains("dedup")) {
        get(j["dedup"], "enabled", c.dedup.enabled);
        get(j["dedup"], "scan_period", c.dedup.scan_period);
        get(j["dedup"], "cow_multiplier", c.dedup.cow_multiplier);
    }
    get(j, "direct_map_base", c.direct_map_base);
    get(j, "kernel_isolation", c.kernel_isolation);
    get(j, "syscall_latency", c.syscall_latency);
    get(j, "fault_latency", c.fault_latency);
}

}  // namespace

void MachineConfig::validate() const {
    caches.validate();
    if (phys_mem % kPage2M || phys_mem == 0) throw SimError("config", "physical memory must be a multiple of 2 MB");
    if (dram.capacity() < phys_mem) throw SimError("config", "DRAM topology smaller than physical memory");
    if (jitter_sigma < 0) throw SimError("config", "jitter must be non-negative");
    if (clock_ghz <= 0) throw SimError("config", "clock must be positive");
    if (refresh.multiplier <= 0 || refresh.commands == 0) throw SimError("config", "bad refresh configuration");
}

Cycles MachineConfig::ns_to_cycles(double ns) const { return static_cast<Cycles>(std::llround(ns * clock_ghz)); }

MachineConfig machine_preset(const std::string& name) {
    auto it = registry().find(name);
    if (it == registry().end()) throw SimError("config", "unknown machine preset '" + name + "'");
    return it->second();
}

std::vector<std::string> machine_presets() {
    std::vector<std::string> v;
    for (auto& [k, _] : registry()) v.push_back(k);
    return v;
}

MachineConfig machine_from_json(const json& j) {
    MachineConfig c = machine_preset(j.value("base", std::string("sandy")));
    try {
        apply(j, c);
    } catch (const json::exception& e) {
        throw SimError("config", e.what());
    }
    c.validate();
    return c;
}

MachineConfig load_machine(const std::string& s) {
    if (registry().count(s)) return machine_preset(s);
    std::ifstream in(s);
    if (!in) throw SimError("config", "unknown preset or unreadable config '" + s + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw SimError("config", std::string("malformed config: ") + e.what());
    }
    return machine_from_json(j);
}

json to_json(const MachineConfig& c) {
    json j;
    j["name"] = c.name;
    j["cores"] = c.caches.cores;
    j["l1"] = geom_json(c.caches.l1);
    j["l2"] = c.caches.l2 ? geom_json(*c.caches.l2) : json(nullptr);
    j["llc"] = geom_json(c.caches.llc);
    j["slice_masks"] = c.caches.slice_hash.masks;
    auto& l = c.caches.lat;
    j["latency"] = {{"l1_hit", l.l1_hit},           {"l2_hit", l.l2_hit},         {"l3_hit", l.l3_hit},
                    {"remote_core", l.remote_core}, {"dram_base", l.dram_base},   {"remote_slice", l.remote_slice},
                    {"flush_base", l.flush_base},   {"flush_hit_extra", l.flush_hit_extra}};
    j["prefetcher"] = {{"enabled", c.caches.prefetcher.enabled},
                       {"trigger_distance", c.caches.prefetcher.trigger_distance}};
    j["dram"] = {{"bank_masks", c.dram.fn.bank},
                 {"rank_masks", c.dram.fn.rank},
                 {"dimm_masks", c.dram.fn.dimm},
                 {"channel_masks", c.dram.fn.channel},
                 {"row_cutoff", c.dram.fn.row_cutoff},
                 {"rows_per_bank", c.dram.rows_per_bank},
                 {"row_size", c.dram.row_size},
                 {"row_hit", c.dram_latency.row_hit},
                 {"row_closed", c.dram_latency.row_closed},
                 {"row_conflict", c.dram_latency.row_conflict}};
    j["refresh"] = {{"window_ms", c.refresh.window_ms},
                    {"commands", c.refresh.commands},
                    {"multiplier", c.refresh.multiplier}};
    j["flips"] = {{"density_per_gb", c.flips.density_per_gb},
                  {"seed", c.flips.seed},
                  {"threshold_min", c.flips.threshold_min},
                  {"threshold_max", c.flips.threshold_max}};
    j["translation_caches"] = {{"tlb", c.tcache.tlb}, {"pde", c.tcache.pde}, {"pdpte", c.tcache.pdpte},
                               {"pml4e", c.tcache.pml4e}};
    auto& p = c.prefetch;
    j["prefetch_latency"] = {{"cached", p.cached},         {"valid_uncached", p.valid_uncached},
                             {"pte_absent", p.pte_absent}, {"pde_absent", p.pde_absent},
                             {"pdpte_absent", p.pdpte_absent}, {"pml4e_absent", p.pml4e_absent}};
    j["clock_ghz"] = c.clock_ghz;
    j["phys_mem"] = c.phys_mem;
    j["jitter_sigma"] = c.jitter_sigma;
    j["seed"] = c.seed;
    j["dedup"] = {{"enabled", c.dedup.enabled},
                  {"scan_period", c.dedup.scan_period},
                  {"cow_multiplier", c.dedup.cow_multiplier}};
    j["direct_map_base"] = c.direct_map_base;
    j["kernel_isolation"] = c.kernel_isolation;
    j["syscall_latency"] = c.syscall_latency;
    j["fault_latency"] = c.fault_latency;
    return j;
}

}  // namespace memsim
