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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "memsim/common.hpp"

namespace memsim {

enum class Addressing { pipt, vipt, vivt };
enum class Inclusion { inclusive, non_inclusive, exclusive };
enum class Policy { lru, random, quad_age };
enum class AccessKind { read, write, code };

enum class HitLevel : u8 { l1 = 1, l2 = 2, l3 = 3, remote = 4, dram = 5 };

const char* to_string(HitLevel l);
const char* to_string(Policy p);
Policy parse_policy(const std::string& s);
Addressing parse_addressing(const std::string& s);
Inclusion parse_inclusion(const std::string& s);

struct CacheGeometry {
    u32 line_size = 64;
    u32 sets = 64;
    u32 ways = 8;
    u32 level = 1;
    Addressing addressing = Addressing::pipt;
    Inclusion inclusion = Inclusion::inclusive;
    u32 slices = 1;
    Policy policy = Policy::lru;
    // quad_age only: sets with index % bip_modulus == 0 insert at age 0 (bimodal)
    u32 bip_modulus = 0;

    u64 capacity() const { return u64(line_size) * sets * ways * slices; }
    unsigned offset_bits() const { return log2_exact(line_size); }
    unsigned index_bits() const { return log2_exact(sets); }
    void validate(u64 smallest_page = kPage) const;
};

// One parity mask per output bit o_k.
struct SliceHash {
    std::vector<u64> masks;
};

unsigned set_index(u64 addr, const CacheGeometry& g);
unsigned slice_of(PAddr p, const SliceHash& h);

struct LatencyModel {
    u32 l1_hit = 4;
    u32 l2_hit = 12;
    u32 l3_hit = 40;
    u32 remote_core = 110;
    u32 dram_base = 200;
    u32 remote_slice = 3;
    u32 flush_base = 150;
    u32 flush_hit_extra = 12;

    void validate() const;
};

struct PrefetcherConfig {
    bool enabled = false;
    u32 trigger_distance = 2;  // lines
};

struct HierarchyConfig {
    u32 cores = 2;
    CacheGeometry l1{};
    std::optional<CacheGeometry> l2{};
    CacheGeometry llc{64, 2048, 16, 3, Addressing::pipt, Inclusion::inclusive, 1, Policy::lru, 0};
    SliceHash slice_hash{};
    LatencyModel lat{};
    PrefetcherConfig prefetcher{};

    void validate() const;
};

struct AccessResult {
    HitLevel level = HitLevel::dram;
    u32 latency = 0;
    u8 n_evicted = 0;
    std::array<PAddr, 4> evicted{};
    bool llc_ref() const { return level >= HitLevel::l3; }
    bool llc_miss() const { return level >= HitLevel::remote; }
};

// Victim choice for one full set. Exposed for direct testing.
struct WayMeta {
    u64 stamp = 0;
    u8 age = 0;
};
unsigned choose_victim(std::span<WayMeta> set, Policy policy, Rng& rng);

class CacheArray {
public:
    static constexpr u64 kInvalid = ~0ull;

    CacheArray() = default;
    explicit CacheArray(const CacheGeometry& g);

    const CacheGeometry& geom() const { return g_; }
    u32 total_sets() const { return g_.sets * g_.slices; }

    // `set` is the flat index slice*sets + set_index
    int find(u32 set, u64 line) const;
    void touch(u32 set, int way);
    // Installs `line`; returns the evicted line address or kInvalid.
    u64 insert(u32 set, u64 line, Rng& rng);
    bool invalidate(u32 set, u64 line);
    u64 line_at(u32 set, u32 way) const { return tags_[u64(set) * g_.ways + way]; }

    struct SetCopy {
        u32 set;
        std::vector<u64> tags;
        std::vector<WayMeta> meta;
    };
    SetCopy save(u32 set) const;
    void load(const SetCopy& c);

private:
    CacheGeometry g_{};
    std::vector<u64> tags_;
    std::vector<WayMeta> meta_;
    u64 clock_ = 0;
};

class CacheHierarchy {
public:
    // Supplies DRAM latency for a line fetched from memory.
    using Backend = std::function<u32(PAddr)>;

    CacheHierarchy(const HierarchyConfig& cfg, u64 seed);

    const HierarchyConfig& config() const { return cfg_; }
    void set_backend(Backend b) { backend_ = std::move(b); }
    const Backend& backend() const { return backend_; }

    AccessResult access(PAddr p, unsigned core, AccessKind kind = AccessKind::read,
                        std::optional<VAddr> v = std::nullopt);
    u32 flush(PAddr p, unsigned core);

    bool cached(PAddr p) const;
    bool in_private(PAddr p, unsigned core) const;
    bool in_llc(PAddr p) const;

    unsigned llc_slice(PAddr p) const;
    u32 llc_set(PAddr p) const;
    unsigned local_slice(unsigned core) const { return core % cfg_.llc.slices; }

    // Inclusive-mode invariant; returns false on violation.
    bool check_inclusion() const;

    // Copy of every set touched by the given lines (all levels, all cores) plus rng
    // state, used to replay experiments from an identical starting point.
    struct Snapshot {
        std::vector<std::pair<int, CacheArray::SetCopy>> sets;
        Rng rng;
    };
    Snapshot snapshot(std::span<const PAddr> lines) const;
    void restore(const Snapshot& s);
    void reseed(u64 seed) { rng_.seed(seed); }

private:
    u64 line_of(PAddr p) const { return p >> off_bits_; }
    u32 l1_set(PAddr p, std::optional<VAddr> v) const;
    u32 l2_set(PAddr p) const;
    void fill_private(unsigned core, PAddr p, std::optional<VAddr> v, AccessResult& r);
    void insert_llc(PAddr p, AccessResult& r);
    void drop_private_everywhere(PAddr p);
    void maybe_prefetch(unsigned core, PAddr p);
    void record(AccessResult& r, u64 line);

    HierarchyConfig cfg_;
    unsigned off_bits_;
    std::vector<CacheArray> l1_;
    std::vector<CacheArray> l2_;
    CacheArray llc_;
    Rng rng_;
    Backend backend_;
    std::vector<u64> last_miss_;
};

}  // namespace memsim
