#pragma once

// Stage drivers. Each stage reads and writes only the artifacts listed below,
// all inside PipelineConfig::out_dir.
//
//   gen       -> flows.jsonl, motifs.json
//   ingest    flows.jsonl | inputs -> train.jsonl, validation.jsonl, test.jsonl, split.json
//   train     train, validation -> model.ckpt, train_log.json
//   discover  model, train, validation -> candidates.jsonl, segments.jsonl
//   compile   segments, train -> tables.bin, tables.json, tree.json
//   simulate  tables, tree, test -> verdicts.<variant>.jsonl, counters.<variant>.json
//   report    verdicts, test, tables, segments [, motifs, model] -> report.<variant>.json
//   sweep     segments, train, test -> sweep.json, sweep.tsv
//
// Every stage also writes the effective configuration to config.json.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>
#include <nlohmann/json.hpp>

#include "kseg/backup_dt.hpp"
#include "kseg/compile.hpp"
#include "kseg/config.hpp"
#include "kseg/dataplane.hpp"
#include "kseg/error.hpp"
#include "kseg/explain.hpp"
#include "kseg/flow_io.hpp"
#include "kseg/keyseg.hpp"
#include "kseg/nn/checkpoint.hpp"
#include "kseg/nn/train.hpp"
#include "kseg/pcap.hpp"
#include "kseg/report.hpp"
#include "kseg/split.hpp"
#include "kseg/synth.hpp"

namespace kseg::pipeline {

namespace fs = std::filesystem;

// Diagnostics sink: (stage, message).
using Log = std::function<void(const std::string&, const std::string&)>;

inline void stderr_log(const std::string& stage, const std::string& message) {
  nlohmann::ordered_json j;
  j["stage"] = stage;
  j["msg"] = message;
  std::cerr << j.dump() << '\n';
}

inline void quiet_log(const std::string&, const std::string&) {}

// ---- file helpers -------------------------------------------------------

inline fs::path artifact(const PipelineConfig& c, const std::string& name) { return fs::path(c.out_dir) / name; }

inline fs::path require(const PipelineConfig& c, const std::string& name, const std::string& producer) {
  fs::path p = artifact(c, name);
  if (!fs::exists(p)) throw FormatError("missing artifact " + p.string() + " (run '" + producer + "' first)");
  return p;
}

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  const std::string s = read_text(p);
  return {s.begin(), s.end()};
}

inline void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
  if (!out) throw Error("write failed for " + p.string());
}

inline void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  write_text(p, std::string(bytes.begin(), bytes.end()));
}

inline nlohmann::json read_json(const fs::path& p, const std::string& format) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(p));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
  if (!j.is_object() || j.value("format", std::string()) != format)
    throw FormatError(p.string() + ": expected format '" + format + "'");
  if (j.value("version", 0) != 1) throw FormatError(p.string() + ": unsupported version");
  return j;
}

inline void write_json(const fs::path& p, const nlohmann::ordered_json& j) { write_text(p, j.dump(2) + "\n"); }

inline std::vector<BidiFlow> read_flows(const fs::path& p) {
  std::istringstream in(read_text(p));
  return read_flow_records(in);
}

inline void write_flows(const fs::path& p, std::span<const BidiFlow> flows) {
  std::ostringstream out;
  write_flow_records(out, flows);
  write_text(p, out.str());
}

inline std::vector<KeySegment> read_segments(const fs::path& p) {
  std::istringstream in(read_text(p));
  return read_key_segments(in);
}

inline void save_config(const PipelineConfig& c) {
  auto j = config_to_json(c);
  j.erase("out_dir");
  write_json(artifact(c, "config.json"), j);
}

inline std::string verdicts_name(TableVariant v) { return std::string("verdicts.") + to_string(v) + ".jsonl"; }
inline std::string counters_name(TableVariant v) { return std::string("counters.") + to_string(v) + ".json"; }
inline std::string report_name(TableVariant v) { return std::string("report.") + to_string(v) + ".json"; }

// ---- verdict file -------------------------------------------------------

inline std::string verdict_to_line(const FlowVerdict& v) {
  nlohmann::ordered_json j;
  j["key"] = tuple_to_json(v.key);
  if (v.event) {
    j["verdict"] = v.event->verdict;
    j["cause"] = to_string(v.event->cause);
    j["decision_index"] = v.event->decision_index;
    if (v.event->provenance) j["segment"] = *v.event->provenance;
  } else {
    j["verdict"] = nullptr;
    j["cause"] = "UNRESOLVED";
  }
  return j.dump();
}

inline std::vector<FlowVerdict> read_verdicts(const fs::path& p) {
  std::vector<FlowVerdict> out;
  std::istringstream in(read_text(p));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      FlowVerdict v;
      v.key = tuple_from_json(j.at("key"));
      const std::string cause = j.at("cause").get<std::string>();
      if (cause != "UNRESOLVED") {
        ClassificationEvent e;
        e.key = v.key;
        e.verdict = j.at("verdict").get<ClassId>();
        e.cause = parse_cause(cause);
        e.decision_index = j.at("decision_index").get<std::uint32_t>();
        if (j.contains("segment")) e.provenance = j.at("segment").get<std::uint32_t>();
        v.event = e;
      }
      out.push_back(std::move(v));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), line_no);
    } catch (const FormatError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return out;
}

// ---- shared helpers -----------------------------------------------------

inline std::map<FiveTuple, ClassId> label_map(std::span<const BidiFlow> flows) {
  std::map<FiveTuple, ClassId> m;
  for (const auto& f : flows)
    if (f.label) m.emplace(f.key, *f.label);
  return m;
}

// One flow per canonical key; later duplicates are dropped.
inline std::vector<BidiFlow> unique_keys(std::span<const BidiFlow> flows, std::size_t& dropped) {
  std::set<FiveTuple> seen;
  std::vector<BidiFlow> out;
  dropped = 0;
  for (const auto& f : flows) {
    if (seen.insert(f.key).second)
      out.push_back(f);
    else
      ++dropped;
  }
  return out;
}

inline BackupTree train_backup(const PipelineConfig& c, std::span<const BidiFlow> train, const Log& log) {
  std::vector<std::string> warnings;
  BackupTree t = train_dt(dt_samples(train, c.max_len), c.backup, &warnings);
  for (const auto& w : warnings) log("compile", w);
  return t;
}

struct SimulationOutput {
  TraceResult trace;
  std::size_t dropped_duplicates = 0;
};

inline SimulationOutput simulate_flows(const CompiledTables& tables, const BackupTree& tree, const SimConfig& sim,
                                       std::span<const BidiFlow> flows) {
  SimulationOutput out;
  const auto unique = unique_keys(flows, out.dropped_duplicates);
  const auto packets = flows_to_packets(unique);
  Simulator s = new_simulator(tables, tree, sim);
  out.trace = run_trace(s, packets);
  return out;
}

inline std::vector<std::vector<Motif>> read_motifs(const fs::path& p, int& jitter) {
  const auto j = read_json(p, "kseg-motifs");
  jitter = j.at("jitter").get<int>();
  return j.at("motifs").get<std::vector<std::vector<Motif>>>();
}

// ---- stages -------------------------------------------------------------

inline void stage_gen(const PipelineConfig& c, const Log& log = stderr_log) {
  validate(c);
  save_config(c);
  const SynthConfig sc = c.synth();
  const SyntheticDataset ds = generate_synthetic(sc);
  write_flows(artifact(c, "flows.jsonl"), ds.flows);
  nlohmann::ordered_json m;
  m["format"] = "kseg-motifs";
  m["version"] = 1;
  m["jitter"] = sc.motif_jitter;
  m["motifs"] = sc.planted_motifs;
  write_json(artifact(c, "motifs.json"), m);
  log("gen", "wrote " + std::to_string(ds.flows.size()) + " flows");
}

inline void stage_ingest(const PipelineConfig& c, const Log& log = stderr_log) {
  validate(c);
  save_config(c);
  std::vector<BidiFlow> flows;
  nlohmann::ordered_json sources = nlohmann::ordered_json::array();
  if (c.inputs.empty()) {
    flows = read_flows(require(c, "flows.jsonl", "gen"));
  } else {
    for (const auto& in : c.inputs) {
      const fs::path p(in.path);
      if (!fs::exists(p)) throw FormatError("missing input " + p.string());
      std::vector<BidiFlow> got;
      nlohmann::ordered_json src;
      src["path"] = p.filename().string();
      if (p.extension() == ".pcap") {
        const auto bytes = read_bytes(p);
        const PcapResult pr = read_pcap(bytes);
        AssembleResult ar = assemble_flows(pr.packets, c.idle_timeout_ms);
        got = std::move(ar.flows);
        src["packets"] = pr.packets.size();
        src["skipped"] = {{"non_ipv4", pr.skipped.non_ipv4},
                          {"non_tcp_udp", pr.skipped.non_tcp_udp},
                          {"malformed", pr.skipped.malformed},
                          {"zero_length", ar.skipped}};
      } else {
        got = read_flows(p);
      }
      if (in.label)
        for (auto& f : got) f.label = in.label;
      src["flows"] = got.size();
      sources.push_back(std::move(src));
      flows.insert(flows.end(), std::make_move_iterator(got.begin()), std::make_move_iterator(got.end()));
    }
    write_flows(artifact(c, "flows.jsonl"), flows);
  }
  const DatasetSplit split = split_dataset(flows, c.split, derive_seed(c.seed, kSeedSplit));
  write_flows(artifact(c, "train.jsonl"), split.train);
  write_flows(artifact(c, "validation.jsonl"), split.validation);
  write_flows(artifact(c, "test.jsonl"), split.test);
  nlohmann::ordered_json j;
  j["format"] = "kseg-split";
  j["version"] = 1;
  j["sources"] = std::move(sources);
  j["counts"] = {{"train", split.train.size()}, {"validation", split.validation.size()}, {"test", split.test.size()}};
  j["warnings"] = split.warnings;
  write_json(artifact(c, "split.json"), j);
  for (const auto& w : split.warnings) log("ingest", w);
  log("ingest", "split " + std::to_string(flows.size()) + " flows into " + std::to_string(split.train.size()) + "/" +
                    std::to_string(split.validation.size()) + "/" + std::to_string(split.test.size()));
}

inline void stage_train(const PipelineConfig& c, const Log& log = stderr_log) {
  validate(c);
  save_config(c);
  const auto train = read_flows(require(c, "train.jsonl", "ingest"));
  const auto val = read_flows(require(c, "validation.jsonl", "ingest"));
  const nn::TrainResult r = nn::train(train, val, c.model, c.training());
  write_bytes(artifact(c, "model.ckpt"), nn::save_checkpoint(r.model));
  nlohmann::ordered_json j;
  j["format"] = "kseg-train-log";
  j["version"] = 1;
  j["best_epoch"] = r.best_epoch;
  auto hist = nlohmann::ordered_json::array();
  for (const auto& e : r.history)
    hist.push_back({{"epoch", e.epoch},
                    {"train_loss", e.train_loss},
                    {"val_accuracy", e.val_accuracy},
                    {"val_macro_f1", e.val_macro_f1}});
  j["history"] = std::move(hist);
  write_json(artifact(c, "train_log.json"), j);
  const auto& best = r.history[static_cast<std::size_t>(r.best_epoch - 1)];
  log("train", "best epoch " + std::to_string(r.best_epoch) + " of " + std::to_string(r.history.size()) +
                   ", validation accuracy " + std::to_string(best.val_accuracy));
}

inline void stage_discover(const PipelineConfig& c, const Log& log = stderr_log) {
  validate(c);
  save_config(c);
  const nn::CnnModel model = nn::load_checkpoint(read_bytes(require(c, "model.ckpt", "train")));
  if (model.shape.seq_len != c.model.seq_len) throw ConfigError("checkpoint input length differs from config");
  const auto train = read_flows(require(c, "train.jsonl", "ingest"));
  const auto val = read_flows(require(c, "validation.jsonl", "ingest"));
  const CandidatePool pool = harvest_candidates(model, train, c.extraction());
  {
    std::ostringstream out;
    write_candidates(out, pool);
    write_text(artifact(c, "candidates.jsonl"), out.str());
  }
  std::vector<KeySegment> segs = build_key_segments(pool, c.clustering());
  const ScoringSet scoring =
      ScoringSet::from(val, model.shape.num_classes, static_cast<std::size_t>(model.shape.seq_len));
  score_segments(segs, scoring);
  std::sort(segs.begin(), segs.end(), priority_before);
  std::ostringstream out;
  write_key_segments(out, segs);
  write_text(artifact(c, "segments.jsonl"), out.str());
  log("discover", std::to_string(pool.size()) + " candidates, " + std::to_string(segs.size()) + " key segments");
}

inline void stage_compile(const PipelineConfig& c, const Log& log = stderr_log) {
  validate(c);
  save_config(c);
  const auto segs = read_segments(require(c, "segments.jsonl", "discover"));
  const auto kept = select_segments(segs, c.score_threshold);
  const CompiledTables tables = compile_tables(kept, c.max_len, c.min_len, c.compile);
  write_bytes(artifact(c, "tables.bin"), serialize(tables));
  write_json(artifact(c, "tables.json"), tables_to_json(tables));
  const auto train = read_flows(require(c, "train.jsonl", "ingest"));
  write_json(artifact(c, "tree.json"), tree_to_json(train_backup(c, train, log)));
  for (const auto& k : tables.sram_skipped)
    log("compile", "segment " + std::to_string(k.provenance) + " left out of the SRAM variant (" +
                       (k.reason == SkipReason::kBudget ? "budget" : "expansion cap") + ")");
  log("compile", std::to_string(kept.size()) + " of " + std::to_string(segs.size()) + " segments kept at S=" +
                     std::to_string(c.score_threshold) + "; " + std::to_string(tables.tcam.size()) +
                     " range rules, " + std::to_string(tables.sram.entry_count()) + " exact rules");
}

inline void stage_simulate(const PipelineConfig& c, const Log& log = stderr_log) {
  validate(c);
  save_config(c);
  const SimConfig sim = c.sim();
  const CompiledTables tables = deserialize(read_bytes(require(c, "tables.bin", "compile")));
  const BackupTree tree = tree_from_json(read_json(require(c, "tree.json", "compile"), "kseg-tree"));
  const auto test = read_flows(require(c, "test.jsonl", "ingest"));
  const SimulationOutput out = simulate_flows(tables, tree, sim, test);
  if (out.dropped_duplicates)
    log("simulate", std::to_string(out.dropped_duplicates) + " flows dropped for reusing a flow key");
  std::string text;
  for (const auto& v : out.trace.flows) text += verdict_to_line(v) + "\n";
  write_text(artifact(c, verdicts_name(sim.variant)), text);
  const auto& k = out.trace.counters;
  nlohmann::ordered_json j;
  j["format"] = "kseg-counters";
  j["version"] = 1;
  j["variant"] = to_string(sim.variant);
  j["packets"] = k.packets;
  j["skipped"] = k.skipped;
  j["flows"] = k.flows;
  j["bypassed"] = k.bypassed;
  j["lookups"] = k.lookups;
  j["segment_events"] = k.segment_events;
  j["backup_pkt_events"] = k.backup_pkt_events;
  j["backup_time_events"] = k.backup_time_events;
  j["dt_on_partial_window"] = k.dt_on_partial_window;
  j["hits_while_pending"] = k.hits_while_pending;
  j["collisions"] = k.collisions;
  j["unresolved"] = out.trace.unresolved();
  j["dropped_duplicate_keys"] = out.dropped_duplicates;
  j["segment_rate"] = out.trace.segment_rate();
  j["backup_rate"] = out.trace.backup_rate();
  write_json(artifact(c, counters_name(sim.variant)), j);
  log("simulate", std::string(to_string(sim.variant)) + ": " + std::to_string(out.trace.resolved()) + " of " +
                      std::to_string(out.trace.flows.size()) + " flows resolved");
}

inline RunReport stage_report(const PipelineConfig& c, const Log& log = stderr_log) {
  validate(c);
  save_config(c);
  const TableVariant variant = c.dataplane.variant;
  const auto verdicts = read_verdicts(require(c, verdicts_name(variant), "simulate"));
  const auto test = read_flows(require(c, "test.jsonl", "ingest"));
  const CompiledTables tables = deserialize(read_bytes(require(c, "tables.bin", "compile")));
  RunReport r = compute_report(verdicts, label_map(test), tables, c.max_len, variant);
  if (fs::exists(artifact(c, "motifs.json"))) {
    int jitter = 0;
    const auto motifs = read_motifs(artifact(c, "motifs.json"), jitter);
    const auto kept = select_segments(read_segments(require(c, "segments.jsonl", "discover")), c.score_threshold);
    r.motifs = motif_recovery(motifs, kept, jitter);
  }
  if (fs::exists(artifact(c, "model.ckpt"))) {
    const nn::CnnModel model = nn::load_checkpoint(read_bytes(artifact(c, "model.ckpt")));
    r.cnn_test_accuracy = nn::evaluate(model, test).accuracy;
  }
  write_json(artifact(c, report_name(variant)), report_to_json(r));
  log("report", std::string(to_string(variant)) + ": accuracy " + std::to_string(r.accuracy) + ", matching rate " +
                    std::to_string(r.segment_matching_rate));
  return r;
}

struct SweepRow {
  double threshold = 0.0;
  std::size_t kept_segments = 0;
  RunReport report;
};

inline std::vector<SweepRow> stage_sweep(const PipelineConfig& c, const Log& log = stderr_log) {
  validate(c);
  save_config(c);
  const auto segs = read_segments(require(c, "segments.jsonl", "discover"));
  const auto train = read_flows(require(c, "train.jsonl", "ingest"));
  const auto test = read_flows(require(c, "test.jsonl", "ingest"));
  const BackupTree tree = train_backup(c, train, log);
  const auto labels = label_map(test);
  const SimConfig sim = c.sim();
  std::vector<SweepRow> rows;
  for (double s : c.sweep_thresholds) {
    SweepRow row;
    row.threshold = s;
    const auto kept = select_segments(segs, s);
    row.kept_segments = kept.size();
    const CompiledTables tables = compile_tables(kept, c.max_len, c.min_len, c.compile);
    const SimulationOutput out = simulate_flows(tables, tree, sim, test);
    row.report = compute_report(out.trace.flows, labels, tables, c.max_len, sim.variant);
    rows.push_back(std::move(row));
  }
  nlohmann::ordered_json j;
  j["format"] = "kseg-sweep";
  j["version"] = 1;
  j["variant"] = to_string(sim.variant);
  auto arr = nlohmann::ordered_json::array();
  std::ostringstream tsv;
  tsv << "S\tkept_segments\trange_rules\texact_rules\tsegment_matching_rate\tsegment_accuracy\tbackup_accuracy\t"
         "accuracy\tmacro_f1\n";
  tsv << std::setprecision(6);
  for (const auto& r : rows) {
    arr.push_back({{"S", r.threshold},
                   {"kept_segments", r.kept_segments},
                   {"range_rules", r.report.rules.range_rules},
                   {"exact_rules", r.report.rules.exact_rules},
                   {"segment_matching_rate", r.report.segment_matching_rate},
                   {"segment_accuracy", r.report.segment_accuracy},
                   {"backup_accuracy", r.report.backup_accuracy},
                   {"accuracy", r.report.accuracy},
                   {"macro_f1", r.report.macro_f1}});
    tsv << r.threshold << '\t' << r.kept_segments << '\t' << r.report.rules.range_rules << '\t'
        << r.report.rules.exact_rules << '\t' << r.report.segment_matching_rate << '\t' << r.report.segment_accuracy
        << '\t' << r.report.backup_accuracy << '\t' << r.report.accuracy << '\t' << r.report.macro_f1 << '\n';
  }
  j["rows"] = std::move(arr);
  write_json(artifact(c, "sweep.json"), j);
  write_text(artifact(c, "sweep.tsv"), tsv.str());
  log("sweep", std::to_string(rows.size()) + " thresholds evaluated");
  return rows;
}

// gen (synthetic only), ingest, train, discover, compile, then simulate and
// report for both table variants.
inline void run_all(const PipelineConfig& c, const Log& log = stderr_log) {
  if (c.inputs.empty()) stage_gen(c, log);
  stage_ingest(c, log);
  stage_train(c, log);
  stage_discover(c, log);
  stage_compile(c, log);
  for (TableVariant v : {TableVariant::kTcam, TableVariant::kSram}) {
    PipelineConfig cv = c;
    cv.dataplane.variant = v;
    stage_simulate(cv, log);
    stage_report(cv, log);
  }
  save_config(c);
}

}  // namespace kseg::pipeline
