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

#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "memsim/cache.hpp"
#include "memsim/dram.hpp"
#include "memsim/mmu.hpp"

namespace memsim {

struct DedupConfig {
    bool enabled = false;
    Cycles scan_period = 0;  // 0: only explicit scans
    u32 cow_multiplier = 1000;
};

struct MachineConfig {
    std::string name = "custom";
    HierarchyConfig caches{};
    DramTopology dram{};
    RefreshConfig refresh{};
    DramLatency dram_latency{};
    FlipSeed flips{};
    TranslationCacheSizes tcache{};
    PrefetchLatency prefetch{};
    double clock_ghz = 2.6;
    u64 phys_mem = 1ull << 30;
    double jitter_sigma = 0.0;  // per-access latency jitter, cycles
    u64 seed = 1;
    DedupConfig dedup{};
    VAddr direct_map_base = 0xffff880000000000ull;
    bool kernel_isolation = false;

    u32 instr_latency = 1;
    u32 rdtsc_latency = 20;
    u32 serialize_latency = 30;
    u32 syscall_latency = 150;
    u32 fault_latency = 1200;

    void validate() const;
    Cycles ns_to_cycles(double ns) const;
};

MachineConfig machine_preset(const std::string& name);
std::vector<std::string> machine_presets();

// Accepts a preset name or a path to a JSON file. JSON files may name a "base"
// preset and override any field.
MachineConfig load_machine(const std::string& preset_or_path);
MachineConfig machine_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MachineConfig& c);

}  // namespace memsim
