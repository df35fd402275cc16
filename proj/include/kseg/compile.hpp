#pragma once

// Compiles key segments into match tables.
//
// TCAM variant: one range entry per segment. Field i of an entry holds the
// segment's slot i; wildcard slots become full-range fields. Priority is the
// segment's rank in priority order, highest number first (N .. 1).
//
// SRAM variant: per effective length l, an exact-match table keyed by l
// values. Each segment contributes the Cartesian product of its observed
// per-slot values. When two segments produce the same key, the
// higher-priority one keeps it and the clash is recorded.
//
// Alignment: an entry of effective length l is compared against the newest
// l packets of the flow window (register slots L_max-l .. L_max-1).

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>
#include <nlohmann/json.hpp>

#include "kseg/binio.hpp"
#include "kseg/error.hpp"
#include "kseg/keyseg.hpp"

namespace kseg {

struct FieldRange {
  bool full = false;
  std::int16_t lo = 0;
  std::int16_t hi = 0;

  bool contains(std::int16_t v) const { return full || (v >= lo && v <= hi); }
  friend bool operator==(const FieldRange&, const FieldRange&) = default;
};

struct TcamEntry {
  std::vector<FieldRange> key;  // L_max fields, full-range on wildcard slots
  std::uint32_t priority = 0;   // higher wins, unique per table
  ClassId action_class = 0;
  std::uint32_t provenance = 0;  // key segment id
  std::uint32_t effective_len = 0;

  friend bool operator==(const TcamEntry&, const TcamEntry&) = default;
};

struct SramEntry {
  ClassId action_class = 0;
  std::uint32_t priority = 0;
  std::uint32_t provenance = 0;

  friend bool operator==(const SramEntry&, const SramEntry&) = default;
};

using ExactKey = std::vector<std::int16_t>;

struct SramTable {
  std::map<std::uint32_t, std::map<ExactKey, SramEntry>> by_length;

  std::size_t entry_count() const {
    std::size_t n = 0;
    for (const auto& [len, t] : by_length) n += t.size();
    return n;
  }
  friend bool operator==(const SramTable&, const SramTable&) = default;
};

struct SramConflict {
  ExactKey key;
  std::uint32_t kept_provenance = 0;
  std::uint32_t dropped_provenance = 0;
  ClassId kept_class = 0;
  ClassId dropped_class = 0;

  friend bool operator==(const SramConflict&, const SramConflict&) = default;
};

enum class SkipReason : std::uint8_t { kExpansionCap = 1, kBudget = 2 };

// A segment left out of the SRAM variant under the lenient policy.
struct SramSkip {
  std::uint32_t provenance = 0;
  SkipReason reason = SkipReason::kExpansionCap;
  std::uint64_t expansion = 0;  // exact keys the segment would need

  friend bool operator==(const SramSkip&, const SramSkip&) = default;
};

struct CompiledTables {
  std::uint32_t max_len = 4;
  std::uint32_t min_len = 2;
  bool has_tcam = false;
  bool has_sram = false;
  std::vector<TcamEntry> tcam;  // descending priority
  SramTable sram;
  std::vector<SramConflict> conflicts;
  std::vector<SramSkip> sram_skipped;

  friend bool operator==(const CompiledTables&, const CompiledTables&) = default;
};

struct TableStats {
  std::size_t range_rules = 0;
  std::size_t exact_rules = 0;
  double avg_splits_per_rule = 0.0;  // exact rules / range rules
  std::map<ClassId, std::size_t> rules_per_class;
  double mean_rules_per_class = 0.0;
};

inline TableStats table_stats(const CompiledTables& t) {
  TableStats s;
  s.range_rules = t.tcam.size();
  s.exact_rules = t.sram.entry_count();
  s.avg_splits_per_rule = s.range_rules ? double(s.exact_rules) / double(s.range_rules) : 0.0;
  for (const auto& e : t.tcam) ++s.rules_per_class[e.action_class];
  if (!s.rules_per_class.empty())
    s.mean_rules_per_class = double(s.range_rules) / double(s.rules_per_class.size());
  return s;
}

struct CompileConfig {
  std::size_t tcam_budget = 2048;
  std::size_t sram_budget = 8192;
  std::size_t expansion_cap = 1024;  // exact entries per segment
  // Strict: exceeding the cap or budget throws. Lenient: the offending
  // segment (cap) or it and every lower-priority one (budget) is left out of
  // the SRAM variant and recorded.
  bool lenient_sram = false;
};

namespace detail {

inline std::vector<KeySegment> priority_sorted(std::span<const KeySegment> segments) {
  std::vector<KeySegment> s(segments.begin(), segments.end());
  std::sort(s.begin(), s.end(), priority_before);
  return s;
}

}  // namespace detail

inline std::vector<TcamEntry> to_tcam(std::span<const KeySegment> segments,
                                      std::size_t budget = CompileConfig{}.tcam_budget) {
  const auto sorted = detail::priority_sorted(segments);
  if (sorted.size() > budget) {
    std::vector<std::uint32_t> dropped;
    for (std::size_t i = sorted.size(); i > budget; --i) dropped.push_back(sorted[i - 1].id);
    throw BudgetError("TCAM budget of " + std::to_string(budget) + " entries exceeded by " +
                          std::to_string(dropped.size()),
                      std::move(dropped));
  }
  std::vector<TcamEntry> out;
  out.reserve(sorted.size());
  const auto n = static_cast<std::uint32_t>(sorted.size());
  for (std::uint32_t rank = 0; rank < n; ++rank) {
    const KeySegment& s = sorted[rank];
    TcamEntry e;
    for (const auto& r : s.slots) e.key.push_back(r.wildcard ? FieldRange{true, INT16_MIN, INT16_MAX}
                                                             : FieldRange{false, r.min, r.max});
    e.priority = n - rank;
    e.action_class = s.class_id;
    e.provenance = s.id;
    e.effective_len = static_cast<std::uint32_t>(s.effective_len);
    out.push_back(std::move(e));
  }
  return out;
}

struct SramResult {
  SramTable table;
  std::vector<SramConflict> conflicts;
  std::vector<SramSkip> skipped;
};

inline SramResult to_sram(std::span<const KeySegment> segments, const CompileConfig& cfg = {}) {
  const auto sorted = detail::priority_sorted(segments);
  const auto n = static_cast<std::uint32_t>(sorted.size());
  SramResult out;
  std::size_t total = 0;
  for (std::uint32_t rank = 0; rank < n; ++rank) {
    const KeySegment& s = sorted[rank];
    if (s.member_values.size() != s.effective_len)
      throw InternalError("segment " + std::to_string(s.id) + " lacks member values");
    std::uint64_t product = 1;
    for (const auto& vals : s.member_values) {
      if (vals.empty()) throw InternalError("segment " + std::to_string(s.id) + " has an empty slot");
      product = std::min<std::uint64_t>(product * vals.size(), std::uint64_t{1} << 40);
    }
    if (product > cfg.expansion_cap) {
      if (!cfg.lenient_sram)
        throw ExpansionError("segment " + std::to_string(s.id) + " expands to " + std::to_string(product) +
                                 " exact entries, more than " + std::to_string(cfg.expansion_cap),
                             s.id);
      out.skipped.push_back({s.id, SkipReason::kExpansionCap, product});
      continue;
    }
    // Expand into a scratch list first so a budget overflow leaves the table
    // untouched for this segment.
    auto& table = out.table.by_length[static_cast<std::uint32_t>(s.effective_len)];
    std::vector<ExactKey> keys;
    std::vector<std::size_t> digit(s.effective_len, 0);
    ExactKey key(s.effective_len);
    bool done = key.empty();
    while (!done) {
      for (std::size_t i = 0; i < key.size(); ++i) key[i] = s.member_values[i][digit[i]];
      keys.push_back(key);
      // Odometer increment over the per-slot value lists.
      std::size_t i = key.size();
      for (;;) {
        if (i == 0) {
          done = true;
          break;
        }
        --i;
        if (++digit[i] < s.member_values[i].size()) break;
        digit[i] = 0;
      }
    }
    std::size_t fresh = 0;
    for (const auto& k : keys) fresh += table.count(k) ? 0 : 1;
    if (total + fresh > cfg.sram_budget) {
      std::vector<std::uint32_t> dropped;
      for (std::uint32_t r = rank; r < n; ++r) dropped.push_back(sorted[r].id);
      if (!cfg.lenient_sram)
        throw BudgetError("SRAM budget of " + std::to_string(cfg.sram_budget) + " entries exceeded at segment " +
                              std::to_string(s.id),
                          std::move(dropped));
      for (std::uint32_t r = rank; r < n; ++r) out.skipped.push_back({sorted[r].id, SkipReason::kBudget, 0});
      break;
    }
    total += fresh;
    const SramEntry entry{s.class_id, n - rank, s.id};
    for (auto& k : keys) {
      auto [it, inserted] = table.emplace(k, entry);
      if (!inserted && it->second.action_class != s.class_id)
        out.conflicts.push_back({k, it->second.provenance, s.id, it->second.action_class, s.class_id});
    }
  }
  for (auto it = out.table.by_length.begin(); it != out.table.by_length.end();)
    it = it->second.empty() ? out.table.by_length.erase(it) : std::next(it);
  return out;
}

struct Variants {
  bool tcam = true;
  bool sram = true;
};

inline CompiledTables compile_tables(std::span<const KeySegment> segments, std::size_t max_len,
                                     std::size_t min_len, const CompileConfig& cfg = {},
                                     Variants variants = {}) {
  for (const auto& s : segments)
    if (s.slots.size() != max_len) throw ConfigError("segment width differs from L_max");
  CompiledTables t;
  t.max_len = static_cast<std::uint32_t>(max_len);
  t.min_len = static_cast<std::uint32_t>(min_len);
  if (variants.tcam) {
    t.tcam = to_tcam(segments, cfg.tcam_budget);
    t.has_tcam = true;
  }
  if (variants.sram) {
    auto r = to_sram(segments, cfg);
    t.sram = std::move(r.table);
    t.conflicts = std::move(r.conflicts);
    t.sram_skipped = std::move(r.skipped);
    t.has_sram = true;
  }
  return t;
}

// Binary table format, magic "KSEGTBL1", version 1, little-endian:
//   u32 max_len, u32 min_len, u8 has_tcam, u8 has_sram
//   u32 n_tcam; per entry: u32 priority, i32 class, u32 provenance,
//       u32 effective_len, u32 n_fields, per field: u8 full, i16 lo, i16 hi
//   u32 n_lengths; per length: u32 len, u32 n_entries,
//       per entry: len x i16 key, i32 class, u32 priority, u32 provenance
//   u32 n_conflicts; per conflict: u32 key_len, key_len x i16,
//       u32 kept_prov, u32 dropped_prov, i32 kept_class, i32 dropped_class
//   u32 n_skipped; per skip: u32 provenance, u8 reason, u64 expansion
//   u32 crc32
inline constexpr std::string_view kTablesMagic = "KSEGTBL1";
inline constexpr std::uint32_t kTablesVersion = 1;
inline constexpr std::uint32_t kMaxWindow = 64;

inline std::vector<std::uint8_t> serialize(const CompiledTables& t) {
  BinaryWriter w(kTablesMagic, kTablesVersion);
  w.u32(t.max_len);
  w.u32(t.min_len);
  w.u8(t.has_tcam);
  w.u8(t.has_sram);
  w.u32(static_cast<std::uint32_t>(t.tcam.size()));
  for (const auto& e : t.tcam) {
    w.u32(e.priority);
    w.i32(e.action_class);
    w.u32(e.provenance);
    w.u32(e.effective_len);
    w.u32(static_cast<std::uint32_t>(e.key.size()));
    for (const auto& f : e.key) {
      w.u8(f.full);
      w.i16(f.lo);
      w.i16(f.hi);
    }
  }
  w.u32(static_cast<std::uint32_t>(t.sram.by_length.size()));
  for (const auto& [len, table] : t.sram.by_length) {
    w.u32(len);
    w.u32(static_cast<std::uint32_t>(table.size()));
    for (const auto& [key, e] : table) {
      for (auto v : key) w.i16(v);
      w.i32(e.action_class);
      w.u32(e.priority);
      w.u32(e.provenance);
    }
  }
  w.u32(static_cast<std::uint32_t>(t.conflicts.size()));
  for (const auto& c : t.conflicts) {
    w.u32(static_cast<std::uint32_t>(c.key.size()));
    for (auto v : c.key) w.i16(v);
    w.u32(c.kept_provenance);
    w.u32(c.dropped_provenance);
    w.i32(c.kept_class);
    w.i32(c.dropped_class);
  }
  w.u32(static_cast<std::uint32_t>(t.sram_skipped.size()));
  for (const auto& k : t.sram_skipped) {
    w.u32(k.provenance);
    w.u8(static_cast<std::uint8_t>(k.reason));
    w.u64(k.expansion);
  }
  return std::move(w).finish();
}

inline CompiledTables deserialize(std::span<const std::uint8_t> bytes) {
  BinaryReader r(bytes, kTablesMagic, kTablesVersion);
  CompiledTables t;
  t.max_len = r.u32();
  t.min_len = r.u32();
  if (t.max_len == 0 || t.max_len > kMaxWindow || t.min_len == 0 || t.min_len > t.max_len)
    throw FormatError("invalid window lengths in table file");
  const std::uint8_t has_tcam = r.u8(), has_sram = r.u8();
  if (has_tcam > 1 || has_sram > 1) throw FormatError("invalid variant flags");
  t.has_tcam = has_tcam;
  t.has_sram = has_sram;
  const std::size_t n_tcam = r.count(20);
  std::vector<std::uint32_t> priorities;
  for (std::size_t i = 0; i < n_tcam; ++i) {
    TcamEntry e;
    e.priority = r.u32();
    e.action_class = r.i32();
    e.provenance = r.u32();
    e.effective_len = r.u32();
    const std::size_t fields = r.count(5);
    if (fields != t.max_len) throw FormatError("TCAM entry width differs from L_max");
    if (e.effective_len < t.min_len || e.effective_len > t.max_len || e.action_class < 0)
      throw FormatError("invalid TCAM entry");
    for (std::size_t k = 0; k < fields; ++k) {
      FieldRange f;
      const std::uint8_t full = r.u8();
      if (full > 1) throw FormatError("invalid field flag");
      f.full = full;
      f.lo = r.i16();
      f.hi = r.i16();
      if (!f.full && f.lo > f.hi) throw FormatError("field range with lo > hi");
      if (f.full != (k >= e.effective_len)) throw FormatError("full-range fields must be the wildcard suffix");
      e.key.push_back(f);
    }
    priorities.push_back(e.priority);
    t.tcam.push_back(std::move(e));
  }
  std::sort(priorities.begin(), priorities.end());
  if (std::adjacent_find(priorities.begin(), priorities.end()) != priorities.end())
    throw FormatError("duplicate TCAM priority");
  if (!std::is_sorted(t.tcam.begin(), t.tcam.end(),
                      [](const TcamEntry& a, const TcamEntry& b) { return a.priority > b.priority; }))
    throw FormatError("TCAM entries not in descending priority");
  const std::size_t n_len = r.count(8);
  for (std::size_t i = 0; i < n_len; ++i) {
    const std::uint32_t len = r.u32();
    if (len < t.min_len || len > t.max_len) throw FormatError("invalid SRAM table length");
    if (t.sram.by_length.count(len)) throw FormatError("duplicate SRAM length table");
    auto& table = t.sram.by_length[len];
    const std::size_t n = r.count(std::size_t{len} * 2 + 12);
    for (std::size_t k = 0; k < n; ++k) {
      ExactKey key(len);
      for (auto& v : key) v = r.i16();
      SramEntry e;
      e.action_class = r.i32();
      e.priority = r.u32();
      e.provenance = r.u32();
      if (e.action_class < 0) throw FormatError("invalid SRAM entry class");
      if (!table.emplace(std::move(key), e).second) throw FormatError("duplicate SRAM key");
    }
  }
  const std::size_t n_conf = r.count(20);
  for (std::size_t i = 0; i < n_conf; ++i) {
    SramConflict c;
    const std::size_t len = r.count(2);
    if (len > kMaxWindow) throw FormatError("invalid conflict key length");
    c.key.resize(len);
    for (auto& v : c.key) v = r.i16();
    c.kept_provenance = r.u32();
    c.dropped_provenance = r.u32();
    c.kept_class = r.i32();
    c.dropped_class = r.i32();
    t.conflicts.push_back(std::move(c));
  }
  const std::size_t n_skip = r.count(13);
  for (std::size_t i = 0; i < n_skip; ++i) {
    SramSkip k;
    k.provenance = r.u32();
    const std::uint8_t reason = r.u8();
    if (reason != 1 && reason != 2) throw FormatError("invalid skip reason");
    k.reason = static_cast<SkipReason>(reason);
    k.expansion = r.u64();
    t.sram_skipped.push_back(k);
  }
  r.expect_end();
  return t;
}

// Human-readable dump with the same content as the binary format.
inline nlohmann::ordered_json tables_to_json(const CompiledTables& t) {
  nlohmann::ordered_json j;
  j["format"] = "kseg-tables";
  j["version"] = kTablesVersion;
  j["max_len"] = t.max_len;
  j["min_len"] = t.min_len;
  j["has_tcam"] = t.has_tcam;
  j["has_sram"] = t.has_sram;
  auto tcam = nlohmann::ordered_json::array();
  for (const auto& e : t.tcam) {
    nlohmann::ordered_json je;
    je["priority"] = e.priority;
    je["class"] = e.action_class;
    je["segment"] = e.provenance;
    je["effective_len"] = e.effective_len;
    auto key = nlohmann::ordered_json::array();
    for (const auto& f : e.key) {
      if (f.full)
        key.push_back("*");
      else
        key.push_back({f.lo, f.hi});
    }
    je["key"] = std::move(key);
    tcam.push_back(std::move(je));
  }
  j["tcam"] = std::move(tcam);
  nlohmann::ordered_json sram = nlohmann::ordered_json::object();
  for (const auto& [len, table] : t.sram.by_length) {
    auto entries = nlohmann::ordered_json::array();
    for (const auto& [key, e] : table) {
      nlohmann::ordered_json je;
      je["key"] = key;
      je["class"] = e.action_class;
      je["priority"] = e.priority;
      je["segment"] = e.provenance;
      entries.push_back(std::move(je));
    }
    sram[std::to_string(len)] = std::move(entries);
  }
  j["sram"] = std::move(sram);
  auto conflicts = nlohmann::ordered_json::array();
  for (const auto& c : t.conflicts)
    conflicts.push_back({{"key", c.key},
                         {"kept_segment", c.kept_provenance},
                         {"dropped_segment", c.dropped_provenance},
                         {"kept_class", c.kept_class},
                         {"dropped_class", c.dropped_class}});
  j["conflicts"] = std::move(conflicts);
  auto skipped = nlohmann::ordered_json::array();
  for (const auto& k : t.sram_skipped)
    skipped.push_back({{"segment", k.provenance},
                       {"reason", k.reason == SkipReason::kExpansionCap ? "expansion_cap" : "budget"},
                       {"expansion", k.expansion}});
  j["sram_skipped"] = std::move(skipped);
  const TableStats s = table_stats(t);
  j["stats"] = {{"range_rules", s.range_rules},
                {"exact_rules", s.exact_rules},
                {"avg_splits_per_rule", s.avg_splits_per_rule},
                {"mean_rules_per_class", s.mean_rules_per_class}};
  return j;
}

inline CompiledTables tables_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "kseg-tables") throw FormatError("not a table dump");
    if (j.at("version").get<std::uint32_t>() != kTablesVersion) throw FormatError("unsupported table dump version");
    CompiledTables t;
    t.max_len = j.at("max_len").get<std::uint32_t>();
    t.min_len = j.at("min_len").get<std::uint32_t>();
    t.has_tcam = j.at("has_tcam").get<bool>();
    t.has_sram = j.at("has_sram").get<bool>();
    for (const auto& je : j.at("tcam")) {
      TcamEntry e;
      e.priority = je.at("priority").get<std::uint32_t>();
      e.action_class = je.at("class").get<ClassId>();
      e.provenance = je.at("segment").get<std::uint32_t>();
      e.effective_len = je.at("effective_len").get<std::uint32_t>();
      for (const auto& f : je.at("key")) {
        if (f.is_string())
          e.key.push_back({true, INT16_MIN, INT16_MAX});
        else
          e.key.push_back({false, f.at(0).get<std::int16_t>(), f.at(1).get<std::int16_t>()});
      }
      t.tcam.push_back(std::move(e));
    }
    for (const auto& [len, entries] : j.at("sram").items()) {
      auto& table = t.sram.by_length[static_cast<std::uint32_t>(std::stoul(len))];
      for (const auto& je : entries)
        table.emplace(je.at("key").get<ExactKey>(),
                      SramEntry{je.at("class").get<ClassId>(), je.at("priority").get<std::uint32_t>(),
                                je.at("segment").get<std::uint32_t>()});
    }
    for (const auto& jc : j.at("conflicts"))
      t.conflicts.push_back({jc.at("key").get<ExactKey>(), jc.at("kept_segment").get<std::uint32_t>(),
                             jc.at("dropped_segment").get<std::uint32_t>(), jc.at("kept_class").get<ClassId>(),
                             jc.at("dropped_class").get<ClassId>()});
    for (const auto& jk : j.value("sram_skipped", nlohmann::json::array()))
      t.sram_skipped.push_back({jk.at("segment").get<std::uint32_t>(),
                                jk.at("reason").get<std::string>() == "budget" ? SkipReason::kBudget
                                                                               : SkipReason::kExpansionCap,
                                jk.at("expansion").get<std::uint64_t>()});
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("table dump: ") + e.what());
  }
}

}  // namespace kseg
