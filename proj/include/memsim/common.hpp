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

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace memsim {

using u8 = std::uint8_t;
using u16 = std::uint16_t;
using u32 = std::uint32_t;
using u64 = std::uint64_t;
using i64 = std::int64_t;

using PAddr = u64;
using VAddr = u64;
using Cycles = u64;

constexpr u64 kPage = 4096;
constexpr u64 kPage2M = 2ull << 20;
constexpr u64 kPage1G = 1ull << 30;

inline unsigned parity(u64 x) { return std::popcount(x) & 1u; }
inline unsigned log2_exact(u64 x) { return static_cast<unsigned>(std::countr_zero(x)); }
inline bool is_pow2(u64 x) { return x && !(x & (x - 1)); }

// Error carrying a stable machine-readable code; the CLI maps codes to exit status.
class SimError : public std::runtime_error {
public:
    SimError(std::string code, const std::string& what)
        : std::runtime_error(code + ": " + what), code_(std::move(code)) {}
    const std::string& code() const { return code_; }

private:
    std::string code_;
};

// Thin wrapper over mt19937_64. The distributions are written out by hand so that
// streams are identical across standard library implementations.
class Rng {
public:
    explicit Rng(u64 seed = 1) : g_(seed) {}
    void seed(u64 s) { g_.seed(s); }
    u64 next() { return g_(); }
    u64 below(u64 n) { return n <= 1 ? 0 : static_cast<u64>((static_cast<unsigned __int128>(g_()) * n) >> 64); }
    double uniform() { return static_cast<double>(g_() >> 11) * 0x1.0p-53; }
    bool chance(double p) { return p > 0 && uniform() < p; }
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }
    u64 geometric(double p) {
        u64 n = 1;
        while (!chance(p) && n < 1'000'000) ++n;
        return n;
    }
    template <class V>
    void shuffle(V& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }
    using result_type = u64;
    static constexpr u64 min() { return 0; }
    static constexpr u64 max() { return ~0ull; }
    u64 operator()() { return g_(); }

private:
    std::mt19937_64 g_;
};

// splitmix64 finalizer, used to derive independent sub-seeds.
inline u64 mix_seed(u64 a, u64 b = 0) {
    u64 z = a + 0x9e3779b97f4a7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace memsim
