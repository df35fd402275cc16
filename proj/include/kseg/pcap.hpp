#pragma once

// Minimal classic-pcap reader (and writer, for fixtures). Ethernet link type
// only; IPv4 TCP/UDP packets become PacketRecords, everything else is
// counted and skipped.

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "kseg/error.hpp"
#include "kseg/traffic.hpp"

namespace kseg {

inline constexpr std::uint32_t kPcapMagicMicros = 0xa1b2c3d4;
inline constexpr std::uint32_t kPcapMagicNanos = 0xa1b23c4d;
inline constexpr std::uint32_t kLinkTypeEthernet = 1;
inline constexpr std::size_t kPcapGlobalHeaderLen = 24;
inline constexpr std::size_t kPcapRecordHeaderLen = 16;
// Larger than any sane snaplen; guards against absurd record lengths.
inline constexpr std::uint32_t kPcapMaxRecordLen = 256 * 1024;

struct PcapSkips {
  std::size_t non_ipv4 = 0;      // ARP, IPv6, other ethertypes
  std::size_t non_tcp_udp = 0;   // ICMP etc.
  std::size_t malformed = 0;     // short headers, bad IHL, total length < 20
  std::size_t total() const { return non_ipv4 + non_tcp_udp + malformed; }
};

struct PcapResult {
  std::vector<PacketRecord> packets;
  PcapSkips skipped;
  bool nanosecond = false;
};

namespace detail {

class ByteCursor {
 public:
  ByteCursor(std::span<const std::uint8_t> data, bool swap) : data_(data), swap_(swap) {}

  std::uint32_t u32(std::size_t at) const {
    std::uint32_t v;
    std::memcpy(&v, data_.data() + at, 4);
    return swap_ ? __builtin_bswap32(v) : v;
  }
  std::uint16_t u16(std::size_t at) const {
    std::uint16_t v;
    std::memcpy(&v, data_.data() + at, 2);
    return swap_ ? __builtin_bswap16(v) : v;
  }

 private:
  std::span<const std::uint8_t> data_;
  bool swap_;
};

inline std::uint16_t be16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}
inline std::uint32_t be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
         std::uint32_t{p[3]};
}

}  // namespace detail

inline PcapResult read_pcap(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kPcapGlobalHeaderLen)
    throw TruncationError("pcap global header truncated", bytes.size());
  std::uint32_t magic;
  std::memcpy(&magic, bytes.data(), 4);
  bool swap = false;
  bool nanos = false;
  if (magic == kPcapMagicMicros) {
  } else if (magic == kPcapMagicNanos) {
    nanos = true;
  } else if (__builtin_bswap32(magic) == kPcapMagicMicros) {
    swap = true;
  } else if (__builtin_bswap32(magic) == kPcapMagicNanos) {
    swap = true;
    nanos = true;
  } else {
    throw FormatError("not a classic pcap file (bad magic)");
  }
  const detail::ByteCursor cur(bytes, swap);
  const std::uint32_t link_type = cur.u32(20);
  if (link_type != kLinkTypeEthernet)
    throw FormatError("unsupported link type " + std::to_string(link_type));

  PcapResult result;
  result.nanosecond = nanos;
  bool have_base = false;
  std::uint64_t base_ms = 0;
  std::size_t off = kPcapGlobalHeaderLen;
  while (off < bytes.size()) {
    if (bytes.size() - off < kPcapRecordHeaderLen)
      throw TruncationError("pcap record header truncated", off);
    const std::uint32_t ts_sec = cur.u32(off);
    const std::uint32_t ts_frac = cur.u32(off + 4);
    const std::uint32_t incl_len = cur.u32(off + 8);
    const std::uint32_t orig_len = cur.u32(off + 12);
    if (incl_len > orig_len) throw FormatError("record at offset " + std::to_string(off) +
                                               " has captured length > original length");
    if (incl_len > kPcapMaxRecordLen)
      throw FormatError("record at offset " + std::to_string(off) + " is implausibly large");
    if (bytes.size() - off - kPcapRecordHeaderLen < incl_len)
      throw TruncationError("pcap record body truncated", off);
    const std::uint8_t* frame = bytes.data() + off + kPcapRecordHeaderLen;
    off += kPcapRecordHeaderLen + incl_len;

    const std::uint64_t ts_ms = std::uint64_t{ts_sec} * 1000 + (nanos ? ts_frac / 1'000'000 : ts_frac / 1000);
    if (!have_base) {
      base_ms = ts_ms;
      have_base = true;
    }

    if (incl_len < 14) {
      ++result.skipped.malformed;
      continue;
    }
    if (detail::be16(frame + 12) != 0x0800) {
      ++result.skipped.non_ipv4;
      continue;
    }
    const std::uint8_t* ip = frame + 14;
    const std::size_t ip_cap = incl_len - 14;
    if (ip_cap < 20 || (ip[0] >> 4) != 4) {
      ++result.skipped.malformed;
      continue;
    }
    const std::size_t ihl = std::size_t{ip[0] & 0x0fu} * 4;
    const std::uint16_t total_len = detail::be16(ip + 2);
    if (ihl < 20 || total_len < 20) {
      ++result.skipped.malformed;
      continue;
    }
    const std::uint8_t proto = ip[9];
    if (!admitted_protocol(proto)) {
      ++result.skipped.non_tcp_udp;
      continue;
    }
    if (ip_cap < ihl + 4) {
      ++result.skipped.malformed;
      continue;
    }
    PacketRecord rec;
    rec.timestamp_ms = ts_ms >= base_ms ? ts_ms - base_ms : 0;
    rec.tuple.src_addr = detail::be32(ip + 12);
    rec.tuple.dst_addr = detail::be32(ip + 16);
    rec.tuple.src_port = detail::be16(ip + ihl);
    rec.tuple.dst_port = detail::be16(ip + ihl + 2);
    rec.tuple.protocol = proto;
    rec.length = total_len;
    result.packets.push_back(rec);
  }
  return result;
}

// Writes a little-endian microsecond pcap with synthetic Ethernet/IPv4/L4
// headers. Frames carry only the headers (captured length < original length).
inline std::vector<std::uint8_t> write_pcap(std::span<const PacketRecord> packets) {
  std::vector<std::uint8_t> out;
  auto le32 = [&out](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  auto le16 = [&out](std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
  };
  auto b16 = [&out](std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
  };
  auto b32 = [&out](std::uint32_t v) {
    for (int i = 3; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  le32(kPcapMagicMicros);
  le16(2);
  le16(4);
  le32(0);
  le32(0);
  le32(65535);
  le32(kLinkTypeEthernet);
  for (const auto& p : packets) {
    const std::uint32_t l4_len = p.tuple.protocol == kProtoTcp ? 20 : 8;
    const std::uint32_t incl = 14 + 20 + l4_len;
    le32(static_cast<std::uint32_t>(p.timestamp_ms / 1000));
    le32(static_cast<std::uint32_t>(p.timestamp_ms % 1000) * 1000);
    le32(incl);
    le32(std::max<std::uint32_t>(incl, 14u + p.length));
    for (int i = 0; i < 12; ++i) out.push_back(static_cast<std::uint8_t>(i < 6 ? 0x02 : 0x04));
    b16(0x0800);
    out.push_back(0x45);
    out.push_back(0);
    b16(p.length);
    b16(0);
    b16(0x4000);
    out.push_back(64);
    out.push_back(p.tuple.protocol);
    b16(0);
    b32(p.tuple.src_addr);
    b32(p.tuple.dst_addr);
    b16(p.tuple.src_port);
    b16(p.tuple.dst_port);
    for (std::uint32_t i = 4; i < l4_len; ++i) out.push_back(0);
  }
  return out;
}

}  // namespace kseg
