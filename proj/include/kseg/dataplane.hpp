#pragma once

// Software model of the per-packet switch pipeline: per-flow registers, a
// sliding window of signed features used as the lookup key, a write-once
// classification cache, and a decision-tree backup fired by packet-count or
// inter-arrival triggers.
//
// Per packet, in order:
//   1. canonical key
//   2. labeled flow: bypass (counters only)
//   3. signed feature relative to the stored first source address
//   4. window shifts left, newest value enters on the right
//   5. segment lookup (entries of length l need pkt_count >= l and compare
//      against the newest l slots)
//   6. on a hit the label is installed and a SEGMENT event emitted;
//      otherwise the DT verdict is cached when pkt_count reaches L_max, then
//      BACKUP_PKT (pkt_count > pkt_max) and BACKUP_TIME (gap > time_max) are
//      checked in that order.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "kseg/backup_dt.hpp"
#include "kseg/compile.hpp"
#include "kseg/error.hpp"
#include "kseg/traffic.hpp"

namespace kseg {

enum class TableVariant { kTcam, kSram };
enum class Fidelity { kExact, kHashed };
enum class Cause { kSegment, kBackupPkt, kBackupTime };

inline const char* to_string(TableVariant v) { return v == TableVariant::kTcam ? "tcam" : "sram"; }
inline const char* to_string(Cause c) {
  switch (c) {
    case Cause::kSegment:
      return "SEGMENT";
    case Cause::kBackupPkt:
      return "BACKUP_PKT";
    case Cause::kBackupTime:
      return "BACKUP_TIME";
  }
  return "?";
}

inline TableVariant parse_variant(const std::string& s) {
  if (s == "tcam") return TableVariant::kTcam;
  if (s == "sram") return TableVariant::kSram;
  throw ConfigError("unknown table variant '" + s + "' (expected tcam or sram)");
}

inline Cause parse_cause(const std::string& s) {
  if (s == "SEGMENT") return Cause::kSegment;
  if (s == "BACKUP_PKT") return Cause::kBackupPkt;
  if (s == "BACKUP_TIME") return Cause::kBackupTime;
  throw FormatError("unknown cause '" + s + "'");
}

inline constexpr std::uint8_t kCounterMax = 255;

struct SimConfig {
  std::size_t max_len = 4;  // L_max
  std::size_t min_len = 2;  // L_min
  std::uint32_t pkt_max = 30;
  std::uint32_t time_max_ms = 256;
  TableVariant variant = TableVariant::kTcam;
  Fidelity fidelity = Fidelity::kExact;
  std::size_t hash_slots = 65536;  // hashed fidelity only, power of two
  std::uint32_t install_delay = 0;  // packets between decision and label install
};

inline void validate(const SimConfig& cfg) {
  if (cfg.max_len == 0 || cfg.max_len > kMaxWindow) throw ConfigError("L_max must be in [1, 64]");
  if (cfg.min_len == 0 || cfg.min_len > cfg.max_len) throw ConfigError("L_min must be in [1, L_max]");
  if (cfg.pkt_max == 0 || cfg.time_max_ms == 0) throw ConfigError("pkt_max and time_max must be positive");
  if (cfg.pkt_max < cfg.max_len) throw ConfigError("pkt_max must be >= L_max");
  if (cfg.pkt_max >= kCounterMax) throw ConfigError("pkt_max must be below the 8-bit counter limit");
  if (cfg.fidelity == Fidelity::kHashed &&
      (cfg.hash_slots == 0 || (cfg.hash_slots & (cfg.hash_slots - 1)) != 0))
    throw ConfigError("hash slot count must be a power of two");
}

struct FlowState {
  std::uint32_t first_src = 0;
  std::uint32_t last_ts = 0;
  std::uint8_t pkt_count = 0;
  std::vector<std::int16_t> window;  // L_max slots, newest rightmost
  std::optional<ClassId> dt_verdict;
  std::optional<ClassId> final_label;
};

struct ClassificationEvent {
  FiveTuple key;
  ClassId verdict = 0;
  Cause cause = Cause::kSegment;
  std::uint32_t decision_index = 0;  // 1-based packet count at decision
  std::optional<std::uint32_t> provenance;  // matched key segment (SEGMENT)

  friend bool operator==(const ClassificationEvent&, const ClassificationEvent&) = default;
};

struct Collision {
  std::size_t slot = 0;
  FiveTuple previous;
  FiveTuple incoming;
  std::uint64_t packet = 0;  // trace position
};

struct SimCounters {
  std::uint64_t packets = 0;
  std::uint64_t skipped = 0;  // not TCP/UDP or zero length
  std::uint64_t flows = 0;
  std::uint64_t bypassed = 0;
  std::uint64_t lookups = 0;
  std::uint64_t segment_events = 0;
  std::uint64_t backup_pkt_events = 0;
  std::uint64_t backup_time_events = 0;
  std::uint64_t dt_on_partial_window = 0;  // backup fired before L_max packets
  std::uint64_t hits_while_pending = 0;    // install_delay > 0 only
  std::uint64_t collisions = 0;

  friend bool operator==(const SimCounters&, const SimCounters&) = default;
};

struct LookupHit {
  ClassId action_class = 0;
  std::uint32_t provenance = 0;
};

// Highest-priority TCAM entry matching the newest slots of the window.
inline std::optional<LookupHit> tcam_lookup(const CompiledTables& t, std::span<const std::int16_t> window,
                                            std::size_t pkt_count) {
  const std::size_t width = window.size();
  for (const auto& e : t.tcam) {
    const std::size_t len = e.effective_len;
    if (pkt_count < len || len > width) continue;
    bool ok = true;
    for (std::size_t i = 0; i < len && ok; ++i) ok = e.key[i].contains(window[width - len + i]);
    if (ok) return LookupHit{e.action_class, e.provenance};
  }
  return std::nullopt;
}

// Exact probes per length table, longest first.
inline std::optional<LookupHit> sram_lookup(const CompiledTables& t, std::span<const std::int16_t> window,
                                            std::size_t pkt_count) {
  const std::size_t width = window.size();
  ExactKey key;
  for (auto it = t.sram.by_length.rbegin(); it != t.sram.by_length.rend(); ++it) {
    const std::size_t len = it->first;
    if (pkt_count < len || len > width) continue;
    key.assign(window.end() - static_cast<std::ptrdiff_t>(len), window.end());
    auto hit = it->second.find(key);
    if (hit != it->second.end()) return LookupHit{hit->second.action_class, hit->second.provenance};
  }
  return std::nullopt;
}

class Simulator {
 public:
  Simulator(CompiledTables tables, BackupTree dt, SimConfig cfg)
      : tables_(std::move(tables)), dt_(std::move(dt)), cfg_(cfg) {
    validate(cfg_);
    if (cfg_.variant == TableVariant::kTcam && !tables_.has_tcam)
      throw ConfigError("tables contain no TCAM variant");
    if (cfg_.variant == TableVariant::kSram && !tables_.has_sram)
      throw ConfigError("tables contain no SRAM variant");
    if (tables_.max_len != cfg_.max_len) throw ConfigError("tables were compiled for a different L_max");
    if (dt_.nodes.empty()) throw ConfigError("backup tree is empty");
    if (dt_.num_features != cfg_.max_len) throw ConfigError("backup tree feature count differs from L_max");
    if (cfg_.fidelity == Fidelity::kHashed) slots_.resize(cfg_.hash_slots);
  }

  const SimConfig& config() const { return cfg_; }
  const SimCounters& counters() const { return counters_; }
  const std::vector<Collision>& collisions() const { return collisions_; }
  std::size_t flow_count() const { return counters_.flows; }

  // Register state for a flow key, if any.
  const FlowState* state(const FiveTuple& key) const {
    const FiveTuple k = canonical_key(key);
    if (cfg_.fidelity == Fidelity::kExact) {
      auto it = flows_.find(k);
      return it == flows_.end() ? nullptr : &it->second;
    }
    const Slot& s = slots_[slot_of(k)];
    return s.owner && *s.owner == k ? &s.state : nullptr;
  }

  std::optional<ClassId> label(const FiveTuple& key) const {
    auto it = labels_.find(canonical_key(key));
    if (it == labels_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<ClassificationEvent> process_packet(const PacketRecord& pkt) {
    const std::uint64_t position = counters_.packets++;
    if (!admitted_protocol(pkt.tuple.protocol) || pkt.length == 0) {
      ++counters_.skipped;
      return std::nullopt;
    }
    const FiveTuple key = canonical_key(pkt.tuple);
    if (labels_.count(key)) {
      ++counters_.bypassed;
      return std::nullopt;
    }
    bool fresh = false;
    FlowState& st = state_for(key, position, fresh);
    if (!seen_.count(key)) {
      seen_.insert({key, true});
      ++counters_.flows;
    }
    const auto ts = static_cast<std::uint32_t>(pkt.timestamp_ms);
    if (fresh) {
      st.first_src = pkt.tuple.src_addr;
      st.last_ts = ts;
    }
    const Direction dir = pkt.tuple.src_addr == st.first_src ? Direction::kForward : Direction::kReverse;
    const std::int16_t value = combined_feature(pkt.length, dir).value();
    std::shift_left(st.window.begin(), st.window.end(), 1);
    st.window.back() = value;
    if (st.pkt_count < kCounterMax) ++st.pkt_count;
    const std::uint32_t gap = ts - st.last_ts;
    st.last_ts = ts;

    auto pending = pending_.find(key);
    if (pending != pending_.end()) {
      if (st.pkt_count >= cfg_.min_len && lookup(st)) ++counters_.hits_while_pending;
      if (--pending->second.remaining == 0) {
        labels_[key] = pending->second.label;
        st.final_label = pending->second.label;
        pending_.erase(pending);
      }
      return std::nullopt;
    }

    std::optional<ClassificationEvent> ev;
    if (st.pkt_count >= cfg_.min_len) {
      ++counters_.lookups;
      if (auto hit = lookup(st)) {
        ev = ClassificationEvent{key, hit->action_class, Cause::kSegment, st.pkt_count, hit->provenance};
        ++counters_.segment_events;
      }
    }
    if (!ev) {
      if (st.pkt_count == cfg_.max_len) st.dt_verdict = dt_predict(dt_, st.window);
      const bool by_pkt = st.pkt_count > cfg_.pkt_max;
      const bool by_time = !by_pkt && gap > cfg_.time_max_ms;
      if (by_pkt || by_time) {
        ClassId verdict;
        if (st.dt_verdict && st.pkt_count >= cfg_.max_len) {
          verdict = *st.dt_verdict;
        } else {
          // The L_max-th packet never arrived: the tree sees the zero-padded window.
          verdict = dt_predict(dt_, st.window);
          ++counters_.dt_on_partial_window;
        }
        ev = ClassificationEvent{key, verdict, by_pkt ? Cause::kBackupPkt : Cause::kBackupTime, st.pkt_count,
                                 std::nullopt};
        ++(by_pkt ? counters_.backup_pkt_events : counters_.backup_time_events);
      }
    }
    if (ev) {
      if (cfg_.install_delay == 0) {
        labels_[key] = ev->verdict;
        st.final_label = ev->verdict;
      } else {
        pending_[key] = Pending{ev->verdict, cfg_.install_delay};
      }
    }
    return ev;
  }

 private:
  struct Slot {
    std::optional<FiveTuple> owner;
    FlowState state;
  };
  struct Pending {
    ClassId label;
    std::uint32_t remaining;
  };

  std::size_t slot_of(const FiveTuple& key) const { return FiveTupleHash{}(key) & (cfg_.hash_slots - 1); }

  FlowState fresh_state() const {
    FlowState s;
    s.window.assign(cfg_.max_len, 0);
    return s;
  }

  FlowState& state_for(const FiveTuple& key, std::uint64_t position, bool& fresh) {
    if (cfg_.fidelity == Fidelity::kExact) {
      auto [it, inserted] = flows_.try_emplace(key);
      if (inserted) it->second = fresh_state();
      fresh = inserted;
      return it->second;
    }
    // Registers are indexed by hash only; a different flow on the same slot
    // inherits whatever state is there.
    const std::size_t idx = slot_of(key);
    Slot& s = slots_[idx];
    if (!s.owner) {
      s.owner = key;
      s.state = fresh_state();
      fresh = true;
    } else if (*s.owner != key) {
      collisions_.push_back({idx, *s.owner, key, position});
      ++counters_.collisions;
      s.owner = key;
    }
    return s.state;
  }

  std::optional<LookupHit> lookup(const FlowState& st) const {
    return cfg_.variant == TableVariant::kTcam ? tcam_lookup(tables_, st.window, st.pkt_count)
                                               : sram_lookup(tables_, st.window, st.pkt_count);
  }

  CompiledTables tables_;
  BackupTree dt_;
  SimConfig cfg_;
  SimCounters counters_;
  std::unordered_map<FiveTuple, FlowState, FiveTupleHash> flows_;
  std::vector<Slot> slots_;
  std::unordered_map<FiveTuple, ClassId, FiveTupleHash> labels_;
  std::unordered_map<FiveTuple, Pending, FiveTupleHash> pending_;
  std::unordered_map<FiveTuple, bool, FiveTupleHash> seen_;
  std::vector<Collision> collisions_;
};

inline Simulator new_simulator(CompiledTables tables, BackupTree dt, const SimConfig& cfg) {
  return Simulator(std::move(tables), std::move(dt), cfg);
}

struct FlowVerdict {
  FiveTuple key;
  std::optional<ClassificationEvent> event;  // empty: unresolved
};

struct TraceResult {
  std::vector<ClassificationEvent> events;  // emission order
  std::vector<FlowVerdict> flows;           // sorted by key
  SimCounters counters;
  std::vector<Collision> collisions;

  std::size_t resolved() const { return events.size(); }
  std::size_t unresolved() const { return flows.size() - events.size(); }
  double segment_rate() const {
    return events.empty() ? 0.0 : double(counters.segment_events) / double(events.size());
  }
  double backup_rate() const { return events.empty() ? 0.0 : 1.0 - segment_rate(); }
  std::vector<std::uint32_t> decision_positions() const {
    std::vector<std::uint32_t> out;
    for (const auto& e : events) out.push_back(e.decision_index);
    std::sort(out.begin(), out.end());
    return out;
  }
};

inline TraceResult run_trace(Simulator& sim, std::span<const PacketRecord> packets) {
  TraceResult r;
  std::map<FiveTuple, std::optional<ClassificationEvent>> per_flow;
  for (const auto& pkt : packets) {
    auto ev = sim.process_packet(pkt);
    if (admitted_protocol(pkt.tuple.protocol) && pkt.length != 0) per_flow.try_emplace(canonical_key(pkt.tuple));
    if (ev) {
      per_flow[ev->key] = *ev;
      r.events.push_back(*ev);
    }
  }
  for (auto& [k, e] : per_flow) r.flows.push_back({k, std::move(e)});
  r.counters = sim.counters();
  r.collisions = sim.collisions();
  return r;
}

// Reference classifier over a materialized flow: at each packet p, rebuild
// the window from the feature list and scan every table entry.
inline std::optional<ClassificationEvent> oracle_classify(const BidiFlow& flow, const CompiledTables& tables,
                                                          const BackupTree& dt, const SimConfig& cfg) {
  const std::size_t L = cfg.max_len;
  const auto feats = flow.features();
  std::uint32_t prev_ts = 0;
  for (std::size_t p = 1; p <= feats.size(); ++p) {
    std::vector<std::int16_t> window(L, 0);
    for (std::size_t i = 0; i < std::min(p, L); ++i) window[L - 1 - i] = feats[p - 1 - i];
    const std::size_t count = std::min<std::size_t>(p, kCounterMax);
    const auto ts = static_cast<std::uint32_t>(flow.packets[p - 1].timestamp_ms);
    const std::uint32_t gap = p == 1 ? 0u : ts - prev_ts;
    prev_ts = ts;

    std::optional<LookupHit> hit;
    if (count >= cfg.min_len) {
      if (cfg.variant == TableVariant::kTcam) {
        const TcamEntry* best = nullptr;
        for (const auto& e : tables.tcam) {
          if (count < e.effective_len) continue;
          bool ok = true;
          for (std::size_t i = 0; i < e.effective_len; ++i)
            ok = ok && e.key[i].contains(window[L - e.effective_len + i]);
          if (ok && (!best || e.priority > best->priority)) best = &e;
        }
        if (best) hit = LookupHit{best->action_class, best->provenance};
      } else {
        for (std::size_t len = L; len >= 1 && !hit; --len) {
          if (count < len) continue;
          auto t = tables.sram.by_length.find(static_cast<std::uint32_t>(len));
          if (t == tables.sram.by_length.end()) continue;
          for (const auto& [key, e] : t->second) {
            if (std::equal(key.begin(), key.end(), window.end() - static_cast<std::ptrdiff_t>(len))) {
              hit = LookupHit{e.action_class, e.provenance};
              break;
            }
          }
        }
      }
    }
    if (hit)
      return ClassificationEvent{flow.key, hit->action_class, Cause::kSegment, static_cast<std::uint32_t>(count),
                                 hit->provenance};
    const bool by_pkt = count > cfg.pkt_max;
    const bool by_time = !by_pkt && gap > cfg.time_max_ms;
    if (by_pkt || by_time) {
      const auto first = dt_features(std::span<const std::int16_t>(feats).first(std::min(p, L)), L);
      return ClassificationEvent{flow.key, dt_predict(dt, first), by_pkt ? Cause::kBackupPkt : Cause::kBackupTime,
                                 static_cast<std::uint32_t>(count), std::nullopt};
    }
  }
  return std::nullopt;
}

struct ResourceReport {
  std::size_t bits_per_flow = 0;
  std::size_t window_width = 0;
  std::size_t tcam_entries = 0;
  std::size_t sram_entries = 0;
};

// first_src (32) + last timestamp (32) + packet counter (8) + L_max x 16.
inline constexpr std::size_t bits_per_flow(std::size_t max_len) { return 32 + 32 + 8 + 16 * max_len; }

inline ResourceReport resource_report(std::size_t max_len, const CompiledTables* tables = nullptr) {
  ResourceReport r;
  r.bits_per_flow = bits_per_flow(max_len);
  r.window_width = max_len;
  if (tables) {
    r.tcam_entries = tables->tcam.size();
    r.sram_entries = tables->sram.entry_count();
  }
  return r;
}

inline ResourceReport resource_report(const SimConfig& cfg, const CompiledTables* tables = nullptr) {
  return resource_report(cfg.max_len, tables);
}

}  // namespace kseg
