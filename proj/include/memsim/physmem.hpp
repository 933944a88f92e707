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
#include <cstring>
#include <memory>
#include <unordered_map>

#include "memsim/common.hpp"

namespace memsim {

// Backing store for simulated DRAM. Frames are materialized on first write;
// untouched frames read as zero.
class PhysicalMemory {
public:
    using Frame = std::array<u8, kPage>;

    explicit PhysicalMemory(u64 size = 1ull << 30) : size_(size) {}

    u64 size() const { return size_; }
    u64 frames() const { return size_ / kPage; }

    u8 read8(PAddr p) const {
        auto* f = find(p / kPage);
        return f ? (*f)[p % kPage] : 0;
    }
    void write8(PAddr p, u8 v) { frame(p / kPage)[p % kPage] = v; }

    u64 read64(PAddr p) const {
        u64 v = 0;
        if (auto* f = find(p / kPage); f && p % kPage <= kPage - 8) {
            std::memcpy(&v, f->data() + p % kPage, 8);
            return v;
        }
        for (int i = 0; i < 8; ++i) v |= static_cast<u64>(read8(p + i)) << (8 * i);
        return v;
    }
    void write64(PAddr p, u64 v) {
        if (p % kPage <= kPage - 8) {
            std::memcpy(frame(p / kPage).data() + p % kPage, &v, 8);
            return;
        }
        for (int i = 0; i < 8; ++i) write8(p + i, static_cast<u8>(v >> (8 * i)));
    }

    void flip_bit(PAddr p, unsigned bit) { frame(p / kPage)[p % kPage] ^= static_cast<u8>(1u << bit); }

    void fill_frame(u64 pfn, u8 v) { frame(pfn).fill(v); }
    void copy_frame(u64 dst, u64 src) {
        if (auto* s = find(src)) frame(dst) = *s;
        else zero_frame(dst);
    }
    void zero_frame(u64 pfn) { frames_.erase(pfn); }

    bool frames_equal(u64 a, u64 b) const {
        auto* fa = find(a);
        auto* fb = find(b);
        if (!fa && !fb) return true;
        static const Frame zero{};
        return std::memcmp((fa ? fa : &zero)->data(), (fb ? fb : &zero)->data(), kPage) == 0;
    }

    // FNV-1a over the frame; zero frames hash identically whether materialized or not.
    u64 frame_hash(u64 pfn) const {
        u64 h = 1469598103934665603ull;
        auto* f = find(pfn);
        for (std::size_t i = 0; i < kPage; ++i) {
            h ^= f ? (*f)[i] : 0;
            h *= 1099511628211ull;
        }
        return h;
    }

    const Frame* find(u64 pfn) const {
        auto it = frames_.find(pfn);
        return it == frames_.end() ? nullptr : it->second.get();
    }

private:
    Frame& frame(u64 pfn) {
        if (pfn >= frames()) throw SimError("bad_paddr", "physical frame out of range");
        auto& slot = frames_[pfn];
        if (!slot) slot = std::make_unique<Frame>(Frame{});
        return *slot;
    }

    u64 size_;
    std::unordered_map<u64, std::unique_ptr<Frame>> frames_;
};

}  // namespace memsim
