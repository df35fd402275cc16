#pragma once

// Line-delimited JSON flow records, the interchange format between pipeline
// stages. One flow per line:
//
//   {"label":3,
//    "key":{"src":"10.0.0.1","dst":"172.16.0.9","sport":40001,"dport":443,"proto":6},
//    "first_src":"10.0.0.1",
//    "packets":[[0,517],[12,-1500],[13,-233]]}
//
// `key` is the canonical five-tuple, `first_src` the address of the flow's
// first sender, and each packet is [timestamp_ms, signed_feature]. `label` is
// null for unlabeled flows. Blank lines are ignored.

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>
#include <nlohmann/json.hpp>

#include "kseg/error.hpp"
#include "kseg/traffic.hpp"

namespace kseg {

namespace detail {

inline nlohmann::ordered_json tuple_to_json(const FiveTuple& t) {
  nlohmann::ordered_json j;
  j["src"] = format_ipv4(t.src_addr);
  j["dst"] = format_ipv4(t.dst_addr);
  j["sport"] = t.src_port;
  j["dport"] = t.dst_port;
  j["proto"] = t.protocol;
  return j;
}

template <typename Json>
std::uint32_t addr_field(const Json& j, const char* name) {
  const auto& v = j.at(name);
  if (!v.is_string()) throw std::invalid_argument(std::string(name) + " must be a string");
  auto parsed = parse_ipv4(v.template get<std::string>());
  if (!parsed) throw std::invalid_argument(std::string(name) + " is not an IPv4 address");
  return *parsed;
}

template <typename T, typename Json>
T bounded_uint(const Json& v, const char* name) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.template get<std::int64_t>() >= 0))
    throw std::invalid_argument(std::string(name) + " must be a non-negative integer");
  const auto x = v.template get<std::uint64_t>();
  if (x > std::numeric_limits<T>::max())
    throw std::invalid_argument(std::string(name) + " out of range");
  return static_cast<T>(x);
}

template <typename Json>
FiveTuple parse_tuple(const Json& key) {
  FiveTuple t;
  t.src_addr = addr_field(key, "src");
  t.dst_addr = addr_field(key, "dst");
  t.src_port = bounded_uint<std::uint16_t>(key.at("sport"), "sport");
  t.dst_port = bounded_uint<std::uint16_t>(key.at("dport"), "dport");
  t.protocol = bounded_uint<std::uint8_t>(key.at("proto"), "proto");
  return t;
}

}  // namespace detail

inline nlohmann::ordered_json tuple_to_json(const FiveTuple& t) { return detail::tuple_to_json(t); }

inline FiveTuple tuple_from_json(const nlohmann::json& j) {
  try {
    return detail::parse_tuple(j);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("five-tuple: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("five-tuple: ") + e.what());
  }
}

inline std::string flow_to_line(const BidiFlow& flow) {
  nlohmann::ordered_json j;
  j["label"] = flow.label ? nlohmann::ordered_json(*flow.label) : nlohmann::ordered_json(nullptr);
  j["key"] = detail::tuple_to_json(flow.key);
  j["first_src"] = format_ipv4(flow.first_src);
  auto pkts = nlohmann::ordered_json::array();
  for (const auto& p : flow.packets) pkts.push_back({p.timestamp_ms, p.feature.value()});
  j["packets"] = std::move(pkts);
  return j.dump();
}

inline BidiFlow flow_from_line(const std::string& line, std::size_t line_no) {
  try {
    const auto j = nlohmann::json::parse(line);
    if (!j.is_object()) throw std::invalid_argument("record must be an object");
    BidiFlow flow;
    const auto& label = j.at("label");
    if (!label.is_null()) {
      if (!label.is_number_integer() || label.get<std::int64_t>() < 0 ||
          label.get<std::int64_t>() > INT32_MAX)
        throw std::invalid_argument("label must be a non-negative integer or null");
      flow.label = label.get<ClassId>();
    }
    flow.key = detail::parse_tuple(j.at("key"));
    if (canonical_key(flow.key) != flow.key) throw std::invalid_argument("key is not canonical");
    flow.first_src = detail::addr_field(j, "first_src");
    if (flow.first_src != flow.key.src_addr && flow.first_src != flow.key.dst_addr)
      throw std::invalid_argument("first_src is not an endpoint of key");
    const auto& pkts = j.at("packets");
    if (!pkts.is_array()) throw std::invalid_argument("packets must be an array");
    std::uint64_t prev_ts = 0;
    for (const auto& p : pkts) {
      if (!p.is_array() || p.size() != 2) throw std::invalid_argument("packet must be [ts, value]");
      const auto ts = detail::bounded_uint<std::uint64_t>(p[0], "timestamp");
      if (!p[1].is_number_integer()) throw std::invalid_argument("feature must be an integer");
      const auto raw = p[1].get<std::int64_t>();
      if (raw == 0 || raw < INT16_MIN || raw > INT16_MAX)
        throw std::invalid_argument("feature " + std::to_string(raw) + " is not a valid signed feature");
      if (ts < prev_ts) throw std::invalid_argument("timestamps must be non-decreasing");
      prev_ts = ts;
      flow.packets.push_back({ts, SignedFeature::from_value(static_cast<int>(raw))});
    }
    if (!flow.packets.empty() && flow.packets.front().feature.value() < 0)
      throw std::invalid_argument("first packet must be in the forward direction");
    return flow;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(e.what(), line_no);
  } catch (const std::invalid_argument& e) {
    throw ParseError(e.what(), line_no);
  }
}

inline void write_flow_records(std::ostream& out, std::span<const BidiFlow> flows) {
  for (const auto& f : flows) out << flow_to_line(f) << '\n';
}

inline std::string write_flow_records(std::span<const BidiFlow> flows) {
  std::ostringstream out;
  write_flow_records(out, flows);
  return out.str();
}

inline std::vector<BidiFlow> read_flow_records(std::istream& in) {
  std::vector<BidiFlow> flows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    flows.push_back(flow_from_line(line, line_no));
  }
  return flows;
}

inline std::vector<BidiFlow> read_flow_records(const std::string& text) {
  std::istringstream in(text);
  return read_flow_records(in);
}

}  // namespace kseg
