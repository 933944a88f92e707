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

#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "memsim/config.hpp"
#include "memsim/eviction.hpp"
#include "memsim/machine.hpp"
#include "memsim/primitives.hpp"

namespace memsim {

// CRC-16/CCITT-FALSE: poly 0x1021, init 0xffff, no reflection, no final xor.
u16 crc16(std::span<const u8> bytes);
// Ack checksum, CRC-8 with poly 0x07, init 0, xorout 0x55.
u8 crc8(std::span<const u8> bytes);

struct Packet {
    std::vector<u8> payload;  // N - 3 bytes
    u8 seq = 0;
    u16 crc = 0;  // over payload and seq

    static Packet make(std::span<const u8> payload, u8 seq);
    // payload | seq | crc (big endian)
    std::vector<u8> bytes() const;
    static Packet parse(std::span<const u8> bytes);
    bool valid() const;
    std::size_t size() const { return payload.size() + 3; }
};

constexpr u32 kAckBits = 16;  // 8-bit seq, 8-bit checksum

u16 encode_ack(u8 seq);
// The acknowledged sequence number if the checksum matches.
std::optional<u8> decode_ack(u16 word);

// Bits go out most significant first.
std::vector<bool> to_bits(std::span<const u8> bytes);
std::vector<u8> from_bits(const std::vector<bool>& bits);

// One transmitter-side action and one receiver-side monitor per bit, per direction.
// Flush-based bindings share one line per bit; Prime+Probe uses congruent private
// sets on both sides. No two bits share an LLC set; with the prefetcher on, no
// page holds two bit lines.
class ChannelBinding {
public:
    ChannelBinding(Cpu& sender, Cpu& receiver, ProbeKind kind, u32 data_bits, u32 calibration_samples = 256);

    ProbeKind kind() const { return kind_; }
    u32 data_bits() const { return static_cast<u32>(data_lines_.size()); }
    // Shared lines (attacker-side addresses of the sender) whose sets carry each bit.
    const std::vector<VAddr>& data_lines() const { return data_lines_; }
    const std::vector<VAddr>& ack_lines() const { return ack_lines_; }
    std::vector<PAddr> data_sets() const;

    void send_data(u32 bit) { signal(data_tx_[bit], sender_); }
    void send_ack(u32 bit) { signal(ack_tx_[bit], receiver_); }
    LineMonitor& data_monitor(u32 bit) { return *data_rx_[bit]; }
    LineMonitor& ack_monitor(u32 bit) { return *ack_rx_[bit]; }

    Cpu& sender() { return sender_; }
    Cpu& receiver() { return receiver_; }

private:
    struct Signal {
        VAddr line = 0;  // flush-based: the shared line
        EvictionSet set;  // Prime+Probe: lines that evict the set
    };
    void signal(const Signal& s, Cpu& cpu);
    void train(const std::vector<Signal>& tx, Cpu& cpu, std::vector<std::unique_ptr<LineMonitor>>& rx, u32 prime,
               Rng& rng);

    Cpu& sender_;
    Cpu& receiver_;
    ProbeKind kind_;
    EvictionStrategy strategy_{};
    std::vector<VAddr> data_lines_, ack_lines_;
    std::vector<Signal> data_tx_, ack_tx_;
    std::vector<std::unique_ptr<LineMonitor>> data_rx_, ack_rx_;
};

struct ChannelOptions {
    u32 packet_bytes = 28;
    double noise = 0;        // probability of flipping each received symbol
    u64 idle_budget = 10000;  // consecutive unacknowledged rounds before deadlock_timeout
    u64 seed = 1;
    u32 calibration_samples = 256;
    Schedule schedule = Schedule::round_robin;
};

struct ChannelStats {
    std::string technique;
    u32 packet_bytes = 0;
    u64 bits_sent = 0;
    u64 bits_received = 0;
    u64 transmitted_bits = 0;  // min(sent, received)
    Cycles cycles = 0;
    double seconds = 0;
    double capacity_bps = 0;
    u64 rounds = 0;
    u64 packets = 0;
    u64 retransmissions = 0;
    u64 duplicates = 0;
    u64 crc_rejects = 0;
    u64 false_accepts = 0;  // accepted packets whose payload differs from the one sent
    u64 wire_bits = 0;      // data symbols sent, including headers and retransmissions
    u64 raw_bits = 0;
    u64 raw_bit_errors = 0;
    u64 payload_bit_errors = 0;
    PerfCounters sender, receiver;
    PerfCounters receiver_data_path;  // data probes only
    std::optional<bool> sender_stealth, receiver_stealth;

    double kilobytes_per_second() const { return capacity_bps / 8.0 / 1000.0; }
    double raw_error_rate() const { return raw_bits ? double(raw_bit_errors) / double(raw_bits) : 0.0; }
    double effective_error_rate() const {
        return transmitted_bits ? double(payload_bit_errors) / double(transmitted_bits) : 0.0;
    }
    nlohmann::json to_json() const;
};

// One transfer between a fresh sender and receiver; `received` gets the accepted payload.
class CovertSession {
public:
    CovertSession(ChannelBinding& binding, std::span<const u8> data, const ChannelOptions& opt);

    Task sender_task();
    Task receiver_task();
    // Runs both tasks to completion on the binding's machine.
    ChannelStats run();
    const std::vector<u8>& received() const { return received_; }
    // Sequence numbers of accepted packets, in order.
    const std::vector<u8>& accepted_seqs() const { return seqs_; }

private:
    bool noisy();

    ChannelBinding& b_;
    Machine& m_;
    ChannelOptions opt_;
    std::vector<u8> data_;
    std::vector<std::vector<u8>> payloads_;
    std::vector<u8> received_;
    std::vector<u8> seqs_;
    ChannelStats st_;
    Rng noise_;
    bool done_ = false;
    // Audit channel: what the sender last put on the wire, unseen by the protocol.
    std::vector<bool> wire_;
    bool wire_fresh_ = false;
};

// Builds a machine, spawns sender and receiver on different cores and transfers `data`.
ChannelStats transfer(const MachineConfig& cfg, ProbeKind kind, std::span<const u8> data, const ChannelOptions& opt,
                      std::vector<u8>* received = nullptr);

// `bytes` of seeded random data over each packet size.
std::vector<ChannelStats> measure(const MachineConfig& cfg, ProbeKind kind, u64 bytes, double noise,
                                  const std::vector<u32>& packet_sizes, u64 seed = 1);

// Counters normalized per ITLB event (ITLB_RA + ITLB_WA).
double per_itlb(u64 events, const PerfCounters& c);

// technique,packet_size,capacity_kBps,error_rate,sender_references,sender_misses,
// sender_stealth,receiver_references,receiver_misses,receiver_stealth
void write_covert_csv(std::ostream& os, const std::vector<ChannelStats>& rows);

}  // namespace memsim
