#pragma once

// Packets, bidirectional flows and the signed length feature.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "kseg/error.hpp"

namespace kseg {

using ClassId = std::int32_t;

inline constexpr std::uint8_t kProtoTcp = 6;
inline constexpr std::uint8_t kProtoUdp = 17;
// Lengths are clamped to the Ethernet MTU before encoding so features fit
// in 16 bits and the embedding vocabulary stays finite.
inline constexpr int kMaxPacketLength = 1500;
inline constexpr std::uint64_t kDefaultIdleTimeoutMs = 64'000;

struct FiveTuple {
  std::uint32_t src_addr = 0;
  std::uint32_t dst_addr = 0;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint8_t protocol = 0;

  FiveTuple reversed() const { return {dst_addr, src_addr, dst_port, src_port, protocol}; }

  friend bool operator==(const FiveTuple&, const FiveTuple&) = default;
  friend auto operator<=>(const FiveTuple& a, const FiveTuple& b) {
    return std::tie(a.src_addr, a.dst_addr, a.src_port, a.dst_port, a.protocol) <=>
           std::tie(b.src_addr, b.dst_addr, b.src_port, b.dst_port, b.protocol);
  }
};

struct FiveTupleHash {
  std::size_t operator()(const FiveTuple& t) const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t v) {
      h ^= v;
      h *= 0x100000001b3ULL;
    };
    mix(t.src_addr);
    mix(t.dst_addr);
    mix((std::uint64_t{t.src_port} << 16) | t.dst_port);
    mix(t.protocol);
    return static_cast<std::size_t>(h);
  }
};

// Symmetric key: both directions of a connection map to the same tuple. The
// endpoint with the numerically smaller (addr, port) becomes the source.
inline FiveTuple canonical_key(const FiveTuple& t) {
  if (std::tie(t.src_addr, t.src_port) <= std::tie(t.dst_addr, t.dst_port)) return t;
  return t.reversed();
}

inline bool admitted_protocol(std::uint8_t protocol) {
  return protocol == kProtoTcp || protocol == kProtoUdp;
}

inline std::string format_ipv4(std::uint32_t addr) {
  return std::to_string(addr >> 24) + "." + std::to_string((addr >> 16) & 0xff) + "." +
         std::to_string((addr >> 8) & 0xff) + "." + std::to_string(addr & 0xff);
}

inline std::optional<std::uint32_t> parse_ipv4(const std::string& text) {
  std::uint32_t out = 0;
  int parts = 0;
  std::size_t pos = 0;
  while (parts < 4) {
    if (pos >= text.size() || text[pos] < '0' || text[pos] > '9') return std::nullopt;
    std::uint32_t octet = 0;
    std::size_t digits = 0;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
      octet = octet * 10 + static_cast<std::uint32_t>(text[pos] - '0');
      ++pos;
      if (++digits > 3 || octet > 255) return std::nullopt;
    }
    out = (out << 8) | octet;
    ++parts;
    if (parts < 4) {
      if (pos >= text.size() || text[pos] != '.') return std::nullopt;
      ++pos;
    }
  }
  if (pos != text.size()) return std::nullopt;
  return out;
}

struct PacketRecord {
  std::uint64_t timestamp_ms = 0;
  FiveTuple tuple;
  std::uint16_t length = 0;  // IP total length

  friend bool operator==(const PacketRecord&, const PacketRecord&) = default;
};

enum class Direction : int { kForward = 1, kReverse = -1 };

// Packet length times direction. Never zero; the sign is the direction
// relative to the flow's first sender.
class SignedFeature {
 public:
  static SignedFeature from_value(int value) {
    if (value == 0 || value < std::numeric_limits<std::int16_t>::min() ||
        value > std::numeric_limits<std::int16_t>::max()) {
      throw InvalidPacketError("signed feature out of range: " + std::to_string(value));
    }
    return SignedFeature(static_cast<std::int16_t>(value));
  }

  constexpr std::int16_t value() const { return value_; }
  constexpr int length() const { return value_ < 0 ? -int{value_} : int{value_}; }
  constexpr Direction direction() const {
    return value_ < 0 ? Direction::kReverse : Direction::kForward;
  }

  friend bool operator==(SignedFeature, SignedFeature) = default;
  friend auto operator<=>(SignedFeature, SignedFeature) = default;

 private:
  constexpr explicit SignedFeature(std::int16_t v) : value_(v) {}
  std::int16_t value_;
};

inline SignedFeature combined_feature(std::uint32_t length, Direction direction) {
  if (length == 0) throw InvalidPacketError("packet length 0");
  const int clamped = static_cast<int>(std::min<std::uint32_t>(length, kMaxPacketLength));
  return SignedFeature::from_value(clamped * static_cast<int>(direction));
}

struct FlowPacket {
  std::uint64_t timestamp_ms = 0;
  SignedFeature feature;

  friend bool operator==(const FlowPacket&, const FlowPacket&) = default;
};

struct BidiFlow {
  FiveTuple key;  // canonical
  std::uint32_t first_src = 0;
  std::vector<FlowPacket> packets;
  std::optional<ClassId> label;

  // Raw signed values of the first `limit` packets.
  std::vector<std::int16_t> features(std::size_t limit = SIZE_MAX) const {
    std::vector<std::int16_t> out;
    const std::size_t n = std::min(limit, packets.size());
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(packets[i].feature.value());
    return out;
  }

  // The tuple as sent by the first sender.
  FiveTuple forward_tuple() const { return key.src_addr == first_src ? key : key.reversed(); }

  friend bool operator==(const BidiFlow&, const BidiFlow&) = default;
};

struct AssembleResult {
  std::vector<BidiFlow> flows;  // ordered by first packet
  std::size_t skipped = 0;      // non-TCP/UDP or zero-length packets
};

// Groups time-ordered packets into bidirectional flows. An idle gap strictly
// greater than `idle_timeout_ms` closes the flow and the next packet under the
// same key opens a new one.
inline AssembleResult assemble_flows(std::span<const PacketRecord> packets,
                                     std::uint64_t idle_timeout_ms = kDefaultIdleTimeoutMs) {
  struct Open {
    std::size_t index;
    std::uint64_t last_ts;
  };
  AssembleResult result;
  std::unordered_map<FiveTuple, Open, FiveTupleHash> open;
  for (const auto& pkt : packets) {
    if (!admitted_protocol(pkt.tuple.protocol) || pkt.length == 0) {
      ++result.skipped;
      continue;
    }
    const FiveTuple key = canonical_key(pkt.tuple);
    auto it = open.find(key);
    if (it == open.end() || pkt.timestamp_ms - it->second.last_ts > idle_timeout_ms) {
      BidiFlow flow;
      flow.key = key;
      flow.first_src = pkt.tuple.src_addr;
      result.flows.push_back(std::move(flow));
      it = open.insert_or_assign(key, Open{result.flows.size() - 1, pkt.timestamp_ms}).first;
    }
    BidiFlow& flow = result.flows[it->second.index];
    const Direction dir =
        pkt.tuple.src_addr == flow.first_src ? Direction::kForward : Direction::kReverse;
    flow.packets.push_back({pkt.timestamp_ms, combined_feature(pkt.length, dir)});
    it->second.last_ts = pkt.timestamp_ms;
  }
  return result;
}

// Inverse of assemble_flows for a set of flows: one packet per feature,
// merged into a single time-ordered trace (ties broken by flow order).
inline std::vector<PacketRecord> flows_to_packets(std::span<const BidiFlow> flows) {
  struct Tagged {
    PacketRecord rec;
    std::size_t flow;
    std::size_t idx;
  };
  std::vector<Tagged> all;
  for (std::size_t f = 0; f < flows.size(); ++f) {
    const BidiFlow& flow = flows[f];
    const FiveTuple fwd = flow.forward_tuple();
    for (std::size_t i = 0; i < flow.packets.size(); ++i) {
      const auto& p = flow.packets[i];
      PacketRecord rec;
      rec.timestamp_ms = p.timestamp_ms;
      rec.tuple = p.feature.direction() == Direction::kForward ? fwd : fwd.reversed();
      rec.length = static_cast<std::uint16_t>(p.feature.length());
      all.push_back({rec, f, i});
    }
  }
  std::stable_sort(all.begin(), all.end(), [](const Tagged& a, const Tagged& b) {
    return std::tie(a.rec.timestamp_ms, a.flow, a.idx) <
           std::tie(b.rec.timestamp_ms, b.flow, b.idx);
  });
  std::vector<PacketRecord> out;
  out.reserve(all.size());
  for (auto& t : all) out.push_back(t.rec);
  return out;
}

inline int num_classes_in(std::span<const BidiFlow> flows) {
  ClassId max_label = -1;
  for (const auto& f : flows)
    if (f.label) max_label = std::max(max_label, *f.label);
  return max_label + 1;
}

}  // namespace kseg
