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

#include <array>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "memsim/machine.hpp"
#include "memsim/primitives.hpp"

namespace memsim {

// ---------------------------------------------------------------- AES-128

using Block = std::array<u8, 16>;

struct AesTables {
    std::array<u8, 256> sbox{};
    std::array<std::array<u32, 256>, 4> te{};  // te[j][x] is T_j[x]
};
const AesTables& aes_tables();

std::array<u32, 44> aes_expand_key(const Block& key);
Block aes_encrypt(const Block& key, const Block& pt);

// ---------------------------------------------------------------- victims

enum class VictimKind { table_accessor, code_accessor, aes };
const char* to_string(VictimKind k);
VictimKind parse_victim(const std::string& s);

// A victim program whose image lives in its own address space. Events run
// synchronously on the victim's Cpu.
class Victim {
public:
    Victim(Cpu& cpu, VictimKind kind, u32 events = 16, u64 seed = 1);

    VictimKind kind() const { return kind_; }
    Cpu& cpu() { return cpu_; }
    VAddr image() const { return image_; }
    u64 image_bytes() const { return bytes_; }
    u32 events() const { return events_; }

    // table_accessor: reads page e. code_accessor: runs the page-aligned function e.
    // aes: encrypts a random block whose first byte has upper nibble e.
    void trigger(u32 event);

    void set_key(const Block& key) { key_ = key; }
    const Block& key() const { return key_; }
    // Real AES-128; only the first-round T-table lookups touch simulated memory.
    Block encrypt(const Block& pt);
    VAddr table_base(unsigned j) const { return image_ + 1024ull * j; }

    // Maps the image read-only into `attacker`; returns the attacker-side base.
    VAddr share_with(Cpu& attacker);
    const std::vector<u32>& access_log() const { return log_; }

private:
    Cpu& cpu_;
    VictimKind kind_;
    u32 events_;
    VAddr image_ = 0;
    u64 bytes_ = 0;
    Block key_{};
    Rng rng_;
    std::vector<u32> log_;  // triggered events, in order
};

// ---------------------------------------------------------------- templates

struct CacheTemplateMatrix {
    std::vector<VAddr> rows;                // monitored lines, attacker addresses
    std::vector<std::vector<u32>> columns;  // events behind each column (several after merging)
    std::vector<std::vector<u64>> hits;     // k, [row][column]
    std::vector<std::vector<u64>> trials;   // n, [row][column]
    std::vector<double> idle;               // hit ratio per row with no event
    std::map<u32, std::size_t> merge_map;   // event -> column

    double h(std::size_t r, std::size_t c) const;
    std::vector<double> profile(std::size_t c) const;
    std::string label(std::size_t c) const;
    bool empty() const { return rows.empty() || columns.empty(); }
    // Between-event variance over mean binomial variance per row; reported only.
    std::vector<double> fscore() const;
    // address,<one column per event label>
    void write_csv(std::ostream& os) const;
};

// Profiling: for every event and line, trigger `triggers` times while probing.
// Lines are probed simultaneously unless the prefetcher is on, in which case
// only one line per page is probed at a time.
CacheTemplateMatrix profile(const MonitorFactory& f, Victim& victim, const std::vector<VAddr>& lines,
                            const std::vector<u32>& events, u32 triggers);

CacheTemplateMatrix prune(const CacheTemplateMatrix& m, double min_range, double merge_mse);

double mse(const std::vector<double>& a, const std::vector<double>& b);

struct LogEntry {
    Cycles time = 0;
    u64 window = 0;
    std::size_t column = 0;
    std::string label;
    double mse = 0;
};

struct ExploitOptions {
    u64 windows = 0;
    double reject_mse = 0.25;
};

// Exploitation: `step(w)` lets the victim act during window w; the log holds one
// entry per window classified as an event.
std::vector<LogEntry> exploit(const CacheTemplateMatrix& m, const MonitorFactory& f, const ExploitOptions& opt,
                              const std::function<void(u64)>& step);

struct AesRecovery {
    std::array<u8, 16> nibbles{};
    std::array<u32, 16> encryptions{};
    std::array<bool, 16> resolved{};
    u32 total = 0;
};

// Chosen-plaintext elimination on the first line of T_{i mod 4}.
AesRecovery aes_recover_upper_nibbles(const MonitorFactory& f, Victim& victim, VAddr attacker_tables, u64 seed,
                                      u32 cap = 160);

}  // namespace memsim
