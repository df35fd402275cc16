#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace kseg {

// Base class of every error raised by the library. Callers that only need a
// message can catch this; the subclasses carry structured context.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidPacketError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad magic, unsupported version, checksum mismatch, schema violation.
class FormatError : public Error {
 public:
  using Error::Error;
};

class TruncationError : public FormatError {
 public:
  TruncationError(const std::string& what, std::size_t offset)
      : FormatError(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class ParseError : public FormatError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : FormatError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class ScoringError : public Error {
 public:
  using Error::Error;
};

class ExpansionError : public Error {
 public:
  ExpansionError(const std::string& what, std::uint32_t segment_id)
      : Error(what), segment_id_(segment_id) {}
  std::uint32_t segment_id() const noexcept { return segment_id_; }

 private:
  std::uint32_t segment_id_;
};

// A table does not fit its entry budget. `dropped()` lists the provenance ids
// (key-segment ids) that would have to be removed, lowest priority first.
class BudgetError : public Error {
 public:
  BudgetError(const std::string& what, std::vector<std::uint32_t> dropped)
      : Error(what), dropped_(std::move(dropped)) {}
  const std::vector<std::uint32_t>& dropped() const noexcept { return dropped_; }

 private:
  std::vector<std::uint32_t> dropped_;
};

class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace kseg
