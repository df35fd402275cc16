#pragma once

// Key segments: range templates built from clustered candidate segments,
// scored on held-out flows and filtered by a score threshold.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>
#include <nlohmann/json.hpp>

#include "kseg/dbscan.hpp"
#include "kseg/error.hpp"
#include "kseg/explain.hpp"
#include "kseg/traffic.hpp"

namespace kseg {

// Padding marker inside clustering vectors and sliding windows. A real
// signed feature is never 0.
inline constexpr std::int16_t kPadValue = 0;
inline constexpr double kScoreEpsilon = 1e-6;

struct PaddedSegment {
  ClassId class_id = 0;
  std::vector<std::int16_t> slots;  // real values first, kPadValue suffix
};

inline PaddedSegment pad_segment(const CandidateSegment& c, std::size_t max_len) {
  if (c.values.size() > max_len) throw InternalError("candidate longer than L_max");
  PaddedSegment p{c.class_id, c.values};
  p.slots.resize(max_len, kPadValue);
  return p;
}

struct SlotRange {
  bool wildcard = false;
  std::int16_t min = 0;
  std::int16_t max = 0;

  bool contains(std::int16_t v) const { return wildcard || (v >= min && v <= max); }
  friend bool operator==(const SlotRange&, const SlotRange&) = default;
};

struct KeySegment {
  std::uint32_t id = 0;
  ClassId class_id = 0;
  std::vector<SlotRange> slots;  // L_max entries, wildcards form a suffix
  std::size_t effective_len = 0;
  // Distinct observed values per non-wildcard slot, ascending.
  std::vector<std::vector<std::int16_t>> member_values;
  double score = 0.0;
  double c_in = 0.0;
  double c_out_star = 0.0;

  // `window` holds exactly effective_len values.
  bool matches_window(std::span<const std::int16_t> window) const {
    for (std::size_t i = 0; i < effective_len; ++i)
      if (!slots[i].contains(window[i])) return false;
    return true;
  }

  friend bool operator==(const KeySegment&, const KeySegment&) = default;
};

// Builds the range template of one cluster. A slot is a wildcard iff some
// member is padded there.
inline KeySegment templateize(std::span<const PaddedSegment> members) {
  if (members.empty()) throw InternalError("cannot templateize an empty cluster");
  const std::size_t width = members.front().slots.size();
  KeySegment seg;
  seg.class_id = members.front().class_id;
  seg.slots.assign(width, SlotRange{});
  std::vector<std::set<std::int16_t>> seen(width);
  std::vector<bool> init(width, false);
  for (const auto& m : members) {
    if (m.class_id != seg.class_id) throw InternalError("cluster mixes classes");
    if (m.slots.size() != width) throw InternalError("cluster members differ in width");
    for (std::size_t i = 0; i < width; ++i) {
      SlotRange& r = seg.slots[i];
      const std::int16_t v = m.slots[i];
      if (v == kPadValue) {
        r.wildcard = true;
        continue;
      }
      seen[i].insert(v);
      if (!init[i]) {
        r.min = r.max = v;
        init[i] = true;
      } else {
        r.min = std::min(r.min, v);
        r.max = std::max(r.max, v);
      }
    }
  }
  seg.effective_len = 0;
  while (seg.effective_len < width && !seg.slots[seg.effective_len].wildcard) ++seg.effective_len;
  for (std::size_t i = seg.effective_len; i < width; ++i) {
    if (!seg.slots[i].wildcard) throw InternalError("padding is not a suffix");
    seg.slots[i] = SlotRange{true, 0, 0};
  }
  for (std::size_t i = 0; i < seg.effective_len; ++i)
    seg.member_values.emplace_back(seen[i].begin(), seen[i].end());
  return seg;
}

// True iff some window of effective_len consecutive features lies inside the
// segment's ranges. Candidate starts are located with the first slot before
// the remaining slots are checked.
inline bool segment_matches(std::span<const std::int16_t> features, const KeySegment& seg) {
  const std::size_t len = seg.effective_len;
  if (len == 0 || features.size() < len) return false;
  const SlotRange& head = seg.slots[0];
  for (std::size_t i = 0; i + len <= features.size(); ++i) {
    if (!head.contains(features[i])) continue;
    if (seg.matches_window(features.subspan(i, len))) return true;
  }
  return false;
}

// Labeled flows truncated to the first `seq_len` packets, grouped for scoring.
struct ScoringSet {
  int num_classes = 0;
  std::vector<std::vector<std::vector<std::int16_t>>> by_class;

  static ScoringSet from(std::span<const BidiFlow> flows, int num_classes, std::size_t seq_len) {
    ScoringSet s;
    s.num_classes = num_classes;
    s.by_class.resize(static_cast<std::size_t>(num_classes));
    for (const auto& f : flows) {
      if (!f.label || *f.label < 0 || *f.label >= num_classes) continue;
      s.by_class[static_cast<std::size_t>(*f.label)].push_back(f.features(seq_len));
    }
    return s;
  }
};

struct SegmentScore {
  double c_in = 0.0;
  double c_out_star = 0.0;
  double score = 0.0;
};

// score = C_in / (max over other classes of C_out + epsilon).
inline SegmentScore score_segment(const KeySegment& seg, const ScoringSet& val,
                                  double epsilon = kScoreEpsilon) {
  if (seg.class_id < 0 || seg.class_id >= val.num_classes)
    throw ScoringError("segment class " + std::to_string(seg.class_id) + " out of range");
  for (int c = 0; c < val.num_classes; ++c)
    if (val.by_class[static_cast<std::size_t>(c)].empty())
      throw ScoringError("class " + std::to_string(c) + " absent from validation set");
  SegmentScore s;
  for (int c = 0; c < val.num_classes; ++c) {
    const auto& flows = val.by_class[static_cast<std::size_t>(c)];
    std::size_t hits = 0;
    for (const auto& f : flows) hits += segment_matches(f, seg);
    const double frac = double(hits) / double(flows.size());
    if (c == seg.class_id)
      s.c_in = frac;
    else
      s.c_out_star = std::max(s.c_out_star, frac);
  }
  s.score = s.c_in / (s.c_out_star + epsilon);
  return s;
}

inline bool slot_less(const SlotRange& a, const SlotRange& b) {
  return std::tuple(a.wildcard, a.min, a.max) < std::tuple(b.wildcard, b.min, b.max);
}

// Priority order: score desc, effective_len desc, slots lexicographic, then
// class and id so the order is total.
inline bool priority_before(const KeySegment& a, const KeySegment& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.effective_len != b.effective_len) return a.effective_len > b.effective_len;
  if (std::lexicographical_compare(a.slots.begin(), a.slots.end(), b.slots.begin(), b.slots.end(), slot_less))
    return true;
  if (std::lexicographical_compare(b.slots.begin(), b.slots.end(), a.slots.begin(), a.slots.end(), slot_less))
    return false;
  return std::tie(a.class_id, a.id) < std::tie(b.class_id, b.id);
}

inline std::vector<KeySegment> select_segments(std::span<const KeySegment> segments, double threshold) {
  if (threshold < 0 || std::isnan(threshold)) throw ConfigError("score threshold must be >= 0");
  std::vector<KeySegment> kept;
  for (const auto& s : segments)
    if (s.score > threshold) kept.push_back(s);
  std::sort(kept.begin(), kept.end(), priority_before);
  return kept;
}

struct ClusteringConfig {
  std::size_t max_len = 4;  // L_max
  std::size_t min_len = 2;  // L_min
  double eps = 64.0;
  std::size_t min_pts = 5;
};

// Pads, clusters and templates each class's candidates. Noise points are
// discarded. Segment ids are assigned in (class, cluster) order.
inline std::vector<KeySegment> build_key_segments(const CandidatePool& pool, const ClusteringConfig& cfg) {
  std::vector<KeySegment> out;
  std::uint32_t next_id = 0;
  for (const auto& cls : pool.by_class) {
    if (cls.empty()) continue;
    std::vector<PaddedSegment> padded;
    std::vector<std::vector<double>> points;
    padded.reserve(cls.size());
    for (const auto& c : cls) {
      padded.push_back(pad_segment(c, cfg.max_len));
      points.emplace_back(padded.back().slots.begin(), padded.back().slots.end());
    }
    const auto labels = dbscan(points, cfg.eps, cfg.min_pts);
    const int clusters = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<std::vector<PaddedSegment>> members(static_cast<std::size_t>(std::max(clusters, 0)));
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] >= 0) members[static_cast<std::size_t>(labels[i])].push_back(padded[i]);
    for (const auto& m : members) {
      KeySegment seg = templateize(m);
      if (seg.effective_len < cfg.min_len) continue;
      seg.id = next_id++;
      out.push_back(std::move(seg));
    }
  }
  return out;
}

inline void score_segments(std::span<KeySegment> segments, const ScoringSet& val,
                           double epsilon = kScoreEpsilon) {
  for (auto& seg : segments) {
    const SegmentScore s = score_segment(seg, val, epsilon);
    seg.score = s.score;
    seg.c_in = s.c_in;
    seg.c_out_star = s.c_out_star;
  }
}

// Key-segment file: one JSON object per line,
//   {"id":7,"class":2,"slots":[[512,540],[-260,-240],"*","*"],
//    "score":12.5,"c_in":0.91,"c_out":0.07,"member_values":[[512,519,540],[-260,-240]]}
// "*" marks a wildcard slot; member_values lists the observed values of each
// non-wildcard slot.
inline nlohmann::ordered_json key_segment_to_json(const KeySegment& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["class"] = s.class_id;
  auto slots = nlohmann::ordered_json::array();
  for (const auto& r : s.slots) {
    if (r.wildcard)
      slots.push_back("*");
    else
      slots.push_back({r.min, r.max});
  }
  j["slots"] = std::move(slots);
  j["score"] = s.score;
  j["c_in"] = s.c_in;
  j["c_out"] = s.c_out_star;
  j["member_values"] = s.member_values;
  return j;
}

inline KeySegment key_segment_from_json(const nlohmann::json& j) {
  KeySegment s;
  s.id = j.at("id").get<std::uint32_t>();
  s.class_id = j.at("class").get<ClassId>();
  if (s.class_id < 0) throw std::invalid_argument("negative class");
  for (const auto& slot : j.at("slots")) {
    if (slot.is_string()) {
      if (slot.get<std::string>() != "*") throw std::invalid_argument("bad wildcard marker");
      s.slots.push_back({true, 0, 0});
    } else {
      const auto lo = slot.at(0).get<std::int16_t>();
      const auto hi = slot.at(1).get<std::int16_t>();
      if (lo > hi) throw std::invalid_argument("range min > max");
      s.slots.push_back({false, lo, hi});
    }
  }
  while (s.effective_len < s.slots.size() && !s.slots[s.effective_len].wildcard) ++s.effective_len;
  for (std::size_t i = s.effective_len; i < s.slots.size(); ++i)
    if (!s.slots[i].wildcard) throw std::invalid_argument("wildcards must form a suffix");
  s.score = j.at("score").get<double>();
  s.c_in = j.value("c_in", 0.0);
  s.c_out_star = j.value("c_out", 0.0);
  s.member_values = j.at("member_values").get<std::vector<std::vector<std::int16_t>>>();
  if (s.member_values.size() != s.effective_len)
    throw std::invalid_argument("member_values must cover every non-wildcard slot");
  for (std::size_t i = 0; i < s.effective_len; ++i)
    for (auto v : s.member_values[i])
      if (!s.slots[i].contains(v)) throw std::invalid_argument("member value outside its range");
  return s;
}

inline void write_key_segments(std::ostream& out, std::span<const KeySegment> segments) {
  for (const auto& s : segments) out << key_segment_to_json(s).dump() << '\n';
}

inline std::vector<KeySegment> read_key_segments(std::istream& in) {
  std::vector<KeySegment> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(key_segment_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), line_no);
    } catch (const std::invalid_argument& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return out;
}

}  // namespace kseg
