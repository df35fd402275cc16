#pragma once

// Little-endian binary framing shared by the versioned artifact formats:
//
//   magic (8 bytes) | version (u32) | payload ... | crc32 (u32, over all prior bytes)
//
// Readers are bounds-checked and throw FormatError/TruncationError; they
// never read past the buffer.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "kseg/error.hpp"

namespace kseg {

class BinaryWriter {
 public:
  BinaryWriter(std::string_view magic, std::uint32_t version) {
    if (magic.size() != 8) throw InternalError("magic must be 8 bytes");
    bytes_.insert(bytes_.end(), magic.begin(), magic.end());
    u32(version);
  }

  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put(v); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void i16(std::int16_t v) { put(static_cast<std::uint16_t>(v)); }
  void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v)); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }

  std::vector<std::uint8_t> finish() && {
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, bytes_.data(), static_cast<uInt>(bytes_.size())));
    put(crc);
    return std::move(bytes_);
  }

 private:
  template <typename T>
  void put(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
      bytes_.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
  }

  std::vector<std::uint8_t> bytes_;
};

class BinaryReader {
 public:
  // Verifies magic, version range and checksum before any payload is read.
  BinaryReader(std::span<const std::uint8_t> bytes, std::string_view magic,
               std::uint32_t max_version)
      : bytes_(bytes) {
    if (bytes.size() < magic.size() + 8) throw TruncationError("artifact too short", bytes.size());
    if (std::memcmp(bytes.data(), magic.data(), magic.size()) != 0)
      throw FormatError("bad magic: expected " + std::string(magic));
    const std::size_t body = bytes.size() - 4;
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= std::uint32_t{bytes[body + i]} << (8 * i);
    const auto actual = static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(body)));
    if (stored != actual) throw FormatError("checksum mismatch");
    end_ = body;
    pos_ = magic.size();
    version_ = u32();
    if (version_ == 0 || version_ > max_version)
      throw FormatError("unsupported format version " + std::to_string(version_));
  }

  std::uint32_t version() const { return version_; }
  bool done() const { return pos_ == end_; }
  std::size_t position() const { return pos_; }

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::int16_t i16() { return static_cast<std::int16_t>(u16()); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  // Element counts read from the stream are checked against the remaining
  // bytes so a corrupted count cannot trigger a huge allocation.
  std::size_t count(std::size_t min_element_bytes) {
    const std::uint32_t n = u32();
    if (min_element_bytes > 0 && n > (end_ - pos_) / min_element_bytes)
      throw FormatError("element count " + std::to_string(n) + " exceeds remaining data");
    return n;
  }

  void expect_end() const {
    if (!done()) throw FormatError("trailing bytes after payload");
  }

 private:
  void need(std::size_t n) const {
    if (end_ - pos_ < n) throw TruncationError("unexpected end of artifact", pos_);
  }
  std::uint64_t get(std::size_t n) {
    need(n);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += n;
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
  std::uint32_t version_ = 0;
};

}  // namespace kseg
