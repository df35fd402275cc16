#pragma once

// Run metrics from per-flow verdicts. Accuracy, macro-F1, matching rate and
// the per-path accuracies are taken over resolved labeled flows, so
//   accuracy = MR * segment_accuracy + (1 - MR) * backup_accuracy
// holds by construction. The decision-position CDF uses every labeled flow
// as denominator; its last point is the resolved fraction.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>
#include <nlohmann/json.hpp>

#include "kseg/compile.hpp"
#include "kseg/dataplane.hpp"
#include "kseg/keyseg.hpp"
#include "kseg/metrics.hpp"
#include "kseg/synth.hpp"

namespace kseg {

struct RuleCounts {
  std::size_t range_rules = 0;
  std::size_t exact_rules = 0;
  std::map<ClassId, std::size_t> rules_per_class;
  double avg_splits_per_rule = 0.0;
  double mean_rules_per_class = 0.0;
  std::size_t sram_skipped = 0;
};

inline RuleCounts rule_counts(const CompiledTables& t) {
  const TableStats s = table_stats(t);
  return {s.range_rules, s.exact_rules, s.rules_per_class, s.avg_splits_per_rule, s.mean_rules_per_class,
          t.sram_skipped.size()};
}

struct MotifRecovery {
  std::size_t planted = 0;
  std::size_t recovered = 0;
  std::vector<std::vector<bool>> found;  // [class][motif]

  double fraction() const { return planted ? double(recovered) / double(planted) : 0.0; }
};

// A planted motif counts as recovered when some segment of its class has the
// same effective length and every slot range overlaps the motif's jittered
// range [v - jitter, v + jitter] at that position.
inline MotifRecovery motif_recovery(const std::vector<std::vector<Motif>>& planted,
                                    std::span<const KeySegment> segments, int jitter) {
  MotifRecovery r;
  r.found.resize(planted.size());
  for (std::size_t c = 0; c < planted.size(); ++c) {
    for (const Motif& m : planted[c]) {
      bool hit = false;
      for (const auto& s : segments) {
        if (s.class_id != static_cast<ClassId>(c) || s.effective_len != m.size()) continue;
        bool all = true;
        for (std::size_t i = 0; i < m.size() && all; ++i) {
          const auto& slot = s.slots[i];
          all = !slot.wildcard && slot.min <= m[i] + jitter && slot.max >= m[i] - jitter;
        }
        if (all) {
          hit = true;
          break;
        }
      }
      r.found[c].push_back(hit);
      ++r.planted;
      r.recovered += hit;
    }
  }
  return r;
}

struct RunReport {
  std::string variant;
  std::size_t flows = 0;  // labeled flows in the trace
  std::size_t resolved = 0;
  std::size_t unresolved = 0;
  std::size_t segment_decisions = 0;
  std::size_t backup_pkt_decisions = 0;
  std::size_t backup_time_decisions = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double segment_matching_rate = 0.0;
  double segment_accuracy = 0.0;
  double backup_accuracy = 0.0;
  std::vector<std::pair<std::uint32_t, double>> decision_cdf;  // (packet index, fraction decided)
  RuleCounts rules;
  std::size_t bits_per_flow = 0;
  std::size_t window_width = 0;
  std::optional<MotifRecovery> motifs;
  std::optional<double> cnn_test_accuracy;
};

inline RunReport compute_report(std::span<const FlowVerdict> verdicts, const std::map<FiveTuple, ClassId>& labels,
                                const CompiledTables& tables, std::size_t max_len, TableVariant variant) {
  RunReport r;
  r.variant = to_string(variant);
  std::vector<ClassId> truth, pred;
  std::size_t seg_ok = 0, bk_ok = 0;
  std::map<std::uint32_t, std::size_t> at_index;
  for (const auto& v : verdicts) {
    auto it = labels.find(v.key);
    if (it == labels.end()) continue;
    ++r.flows;
    if (!v.event) {
      ++r.unresolved;
      continue;
    }
    ++r.resolved;
    const auto& e = *v.event;
    const bool ok = e.verdict == it->second;
    truth.push_back(it->second);
    pred.push_back(e.verdict);
    ++at_index[e.decision_index];
    switch (e.cause) {
      case Cause::kSegment:
        ++r.segment_decisions;
        seg_ok += ok;
        break;
      case Cause::kBackupPkt:
        ++r.backup_pkt_decisions;
        bk_ok += ok;
        break;
      case Cause::kBackupTime:
        ++r.backup_time_decisions;
        bk_ok += ok;
        break;
    }
  }
  const std::size_t backups = r.backup_pkt_decisions + r.backup_time_decisions;
  r.accuracy = accuracy(truth, pred);
  r.macro_f1 = macro_f1(truth, pred);
  r.segment_matching_rate = r.resolved ? double(r.segment_decisions) / double(r.resolved) : 0.0;
  r.segment_accuracy = r.segment_decisions ? double(seg_ok) / double(r.segment_decisions) : 0.0;
  r.backup_accuracy = backups ? double(bk_ok) / double(backups) : 0.0;
  std::size_t cum = 0;
  for (const auto& [k, n] : at_index) {
    cum += n;
    r.decision_cdf.emplace_back(k, double(cum) / double(r.flows));
  }
  r.rules = rule_counts(tables);
  r.bits_per_flow = resource_report(max_len).bits_per_flow;
  r.window_width = max_len;
  return r;
}

inline nlohmann::ordered_json report_to_json(const RunReport& r) {
  using J = nlohmann::ordered_json;
  J j;
  j["variant"] = r.variant;
  j["flows"] = r.flows;
  j["resolved"] = r.resolved;
  j["unresolved"] = r.unresolved;
  j["decisions"] = {{"segment", r.segment_decisions},
                    {"backup_pkt", r.backup_pkt_decisions},
                    {"backup_time", r.backup_time_decisions}};
  j["accuracy"] = r.accuracy;
  j["macro_f1"] = r.macro_f1;
  j["segment_matching_rate"] = r.segment_matching_rate;
  j["segment_accuracy"] = r.segment_accuracy;
  j["backup_accuracy"] = r.backup_accuracy;
  J cdf = J::array();
  for (const auto& [k, f] : r.decision_cdf) cdf.push_back({k, f});
  j["decision_cdf"] = std::move(cdf);
  J per_class = J::object();
  for (const auto& [c, n] : r.rules.rules_per_class) per_class[std::to_string(c)] = n;
  j["rules"] = {{"range_rules", r.rules.range_rules},
                {"exact_rules", r.rules.exact_rules},
                {"rules_per_class", std::move(per_class)},
                {"mean_rules_per_class", r.rules.mean_rules_per_class},
                {"avg_splits_per_rule", r.rules.avg_splits_per_rule},
                {"sram_skipped_segments", r.rules.sram_skipped}};
  j["bits_per_flow"] = r.bits_per_flow;
  j["window_width"] = r.window_width;
  if (r.cnn_test_accuracy) j["cnn_test_accuracy"] = *r.cnn_test_accuracy;
  if (r.motifs) {
    J found = J::array();
    for (const auto& cls : r.motifs->found) found.push_back(cls);
    j["motif_recovery"] = {{"planted", r.motifs->planted},
                           {"recovered", r.motifs->recovered},
                           {"fraction", r.motifs->fraction()},
                           {"found", std::move(found)}};
  }
  return j;
}

}  // namespace kseg
