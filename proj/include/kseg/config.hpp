#pragma once

// Pipeline configuration: every stage's parameters in one validated object,
// persisted as JSON next to the artifacts it produced.
//
// Precedence, lowest first: built-in defaults, --config file, KSEG_*
// environment variables, command-line flags.

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>
#include <nlohmann/json.hpp>

#include "kseg/backup_dt.hpp"
#include "kseg/compile.hpp"
#include "kseg/dataplane.hpp"
#include "kseg/error.hpp"
#include "kseg/explain.hpp"
#include "kseg/keyseg.hpp"
#include "kseg/nn/model.hpp"
#include "kseg/nn/train.hpp"
#include "kseg/rng.hpp"
#include "kseg/split.hpp"
#include "kseg/synth.hpp"

namespace kseg {

// Tags fed to derive_seed(seed, tag); one per randomized stage.
inline constexpr std::uint64_t kSeedMotifs = 1;
inline constexpr std::uint64_t kSeedGen = 2;
inline constexpr std::uint64_t kSeedSplit = 3;
inline constexpr std::uint64_t kSeedTrain = 4;

struct InputSpec {
  std::string path;             // .pcap or flow-record .jsonl
  std::optional<ClassId> label;  // applied to every flow of a pcap
};

struct SyntheticSpec {
  int num_classes = 5;
  int flows_per_class = 2000;
  int motifs_per_class = 1;
  int motif_jitter = 32;
  std::pair<int, int> noise_value_range{40, 1500};
  std::pair<int, int> noise_len_range{4, 20};
  std::pair<std::uint64_t, std::uint64_t> gap_ms_range{1, 40};
  std::uint64_t tail_gap_ms = 1000;
  std::uint64_t start_spread_ms = 60'000;
  bool noise_avoids_motifs = true;
  std::vector<double> decoy_rates;
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "kseg_out";

  std::vector<InputSpec> inputs;  // empty: the generated synthetic set
  std::uint64_t idle_timeout_ms = kDefaultIdleTimeoutMs;
  SplitRatios split;
  SyntheticSpec synthetic;

  std::size_t min_len = 2;  // L_min
  std::size_t max_len = 4;  // L_max
  nn::ModelShape model;
  nn::TrainConfig train;
  double extraction_threshold = 0.5;  // t
  double dbscan_eps = 64.0;
  std::size_t dbscan_min_pts = 5;
  double score_threshold = 2.0;  // S
  CompileConfig compile{2048, 8192, 1024, true};
  DtParams backup;
  SimConfig dataplane;
  std::vector<double> sweep_thresholds{0.5, 1.0, 2.0, 3.0, 4.0, 8.0};

  ExtractionConfig extraction() const { return {extraction_threshold, min_len, max_len}; }
  ClusteringConfig clustering() const { return {max_len, min_len, dbscan_eps, dbscan_min_pts}; }
  SimConfig sim() const {
    SimConfig s = dataplane;
    s.max_len = max_len;
    s.min_len = min_len;
    return s;
  }
  nn::TrainConfig training() const {
    nn::TrainConfig t = train;
    t.seed = derive_seed(seed, kSeedTrain);
    return t;
  }
  SynthConfig synth() const {
    SynthConfig s;
    s.num_classes = synthetic.num_classes;
    s.flows_per_class = synthetic.flows_per_class;
    s.planted_motifs = make_random_motifs(synthetic.num_classes, synthetic.motifs_per_class,
                                          synthetic.motif_jitter, derive_seed(seed, kSeedMotifs));
    s.noise_value_range = synthetic.noise_value_range;
    s.noise_len_range = synthetic.noise_len_range;
    s.motif_jitter = synthetic.motif_jitter;
    s.noise_avoids_motifs = synthetic.noise_avoids_motifs;
    s.gap_ms_range = synthetic.gap_ms_range;
    s.tail_gap_ms = synthetic.tail_gap_ms;
    s.start_spread_ms = synthetic.start_spread_ms;
    s.decoy_rates = synthetic.decoy_rates;
    s.seed = derive_seed(seed, kSeedGen);
    return s;
  }
};

inline void validate(const PipelineConfig& c) {
  if (c.out_dir.empty()) throw ConfigError("out_dir must not be empty");
  if (c.min_len < 1 || c.min_len > c.max_len || c.max_len > kMaxWindow)
    throw ConfigError("segment lengths must satisfy 1 <= L_min <= L_max <= 64");
  if (c.max_len > static_cast<std::size_t>(c.model.seq_len)) throw ConfigError("L_max exceeds the model input length");
  nn::ModelShape shape = c.model;
  nn::validate(shape);
  if (c.train.epochs < 1 || c.train.batch_size < 1 || !(c.train.learning_rate > 0) || c.train.patience < 0)
    throw ConfigError("training parameters must be positive");
  if (!(c.dbscan_eps > 0) || c.dbscan_min_pts < 1) throw ConfigError("dbscan eps and min_pts must be positive");
  if (!(c.score_threshold >= 0)) throw ConfigError("score threshold must be >= 0");
  for (double s : c.sweep_thresholds)
    if (!(s >= 0)) throw ConfigError("sweep thresholds must be >= 0");
  if (c.backup.max_depth < 0 || c.backup.min_leaf < 1) throw ConfigError("invalid backup tree parameters");
  validate(c.sim());
  const double sum = c.split.train + c.split.validation + c.split.test;
  if (c.split.train < 0 || c.split.validation < 0 || c.split.test < 0 || std::abs(sum - 1.0) > 1e-9)
    throw ConfigError("split ratios must be non-negative and sum to 1");
  if (c.inputs.empty()) {
    const auto& s = c.synthetic;
    if (s.num_classes < 2 || s.flows_per_class < 1 || s.motifs_per_class < 1)
      throw ConfigError("synthetic data needs >= 2 classes, >= 1 flow and motif per class");
  }
  for (const auto& in : c.inputs)
    if (in.path.empty()) throw ConfigError("input path must not be empty");
}

namespace detail {

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw ConfigError("unknown config key '" + where + (where.empty() ? "" : ".") + k + "'");
  }
}

inline Fidelity parse_fidelity(const std::string& s) {
  if (s == "exact") return Fidelity::kExact;
  if (s == "hashed") return Fidelity::kHashed;
  throw ConfigError("unknown fidelity '" + s + "' (expected exact or hashed)");
}

}  // namespace detail

inline nlohmann::ordered_json config_to_json(const PipelineConfig& c) {
  using J = nlohmann::ordered_json;
  J j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  J inputs = J::array();
  for (const auto& in : c.inputs) {
    J e;
    e["path"] = in.path;
    if (in.label) e["label"] = *in.label;
    inputs.push_back(std::move(e));
  }
  j["data"] = {{"inputs", std::move(inputs)},
               {"idle_timeout_ms", c.idle_timeout_ms},
               {"split", {{"train", c.split.train}, {"validation", c.split.validation}, {"test", c.split.test}}}};
  const auto& s = c.synthetic;
  j["synthetic"] = {{"num_classes", s.num_classes},
                    {"flows_per_class", s.flows_per_class},
                    {"motifs_per_class", s.motifs_per_class},
                    {"motif_jitter", s.motif_jitter},
                    {"noise_value_range", {s.noise_value_range.first, s.noise_value_range.second}},
                    {"noise_len_range", {s.noise_len_range.first, s.noise_len_range.second}},
                    {"gap_ms_range", {s.gap_ms_range.first, s.gap_ms_range.second}},
                    {"tail_gap_ms", s.tail_gap_ms},
                    {"start_spread_ms", s.start_spread_ms},
                    {"noise_avoids_motifs", s.noise_avoids_motifs},
                    {"decoy_rates", s.decoy_rates}};
  j["segments"] = {{"min_len", c.min_len}, {"max_len", c.max_len}};
  j["model"] = {{"embed_dim", c.model.embed_dim},
                {"kernel", c.model.kernel},
                {"channels", c.model.channels},
                {"conv_layers", c.model.conv_layers},
                {"seq_len", c.model.seq_len}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"patience", c.train.patience}};
  j["extraction"] = {{"threshold", c.extraction_threshold}};
  j["clustering"] = {{"eps", c.dbscan_eps}, {"min_pts", c.dbscan_min_pts}};
  j["score_threshold"] = c.score_threshold;
  j["compile"] = {{"tcam_budget", c.compile.tcam_budget},
                  {"sram_budget", c.compile.sram_budget},
                  {"expansion_cap", c.compile.expansion_cap},
                  {"lenient_sram", c.compile.lenient_sram}};
  j["backup"] = {{"max_depth", c.backup.max_depth}, {"min_leaf", c.backup.min_leaf}};
  const auto& d = c.dataplane;
  j["dataplane"] = {{"pkt_max", d.pkt_max},
                    {"time_max_ms", d.time_max_ms},
                    {"variant", to_string(d.variant)},
                    {"fidelity", d.fidelity == Fidelity::kExact ? "exact" : "hashed"},
                    {"hash_slots", d.hash_slots},
                    {"install_delay", d.install_delay}};
  j["sweep"] = {{"thresholds", c.sweep_thresholds}};
  return j;
}

// Applies the keys present in `j` on top of `base`. Unknown keys are errors.
inline PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig c = {}) {
  using detail::check_keys;
  using detail::read_opt;
  try {
    check_keys(j,
               {"seed", "out_dir", "data", "synthetic", "segments", "model", "train", "extraction", "clustering",
                "score_threshold", "compile", "backup", "dataplane", "sweep"},
               "");
    read_opt(j, "seed", c.seed);
    read_opt(j, "out_dir", c.out_dir);
    if (j.contains("data")) {
      const auto& d = j.at("data");
      check_keys(d, {"inputs", "idle_timeout_ms", "split"}, "data");
      if (d.contains("inputs")) {
        c.inputs.clear();
        for (const auto& e : d.at("inputs")) {
          check_keys(e, {"path", "label"}, "data.inputs[]");
          InputSpec in;
          in.path = e.at("path").get<std::string>();
          if (e.contains("label")) in.label = e.at("label").get<ClassId>();
          c.inputs.push_back(std::move(in));
        }
      }
      read_opt(d, "idle_timeout_ms", c.idle_timeout_ms);
      if (d.contains("split")) {
        const auto& s = d.at("split");
        check_keys(s, {"train", "validation", "test"}, "data.split");
        read_opt(s, "train", c.split.train);
        read_opt(s, "validation", c.split.validation);
        read_opt(s, "test", c.split.test);
      }
    }
    if (j.contains("synthetic")) {
      const auto& s = j.at("synthetic");
      check_keys(s,
                 {"num_classes", "flows_per_class", "motifs_per_class", "motif_jitter", "noise_value_range",
                  "noise_len_range", "gap_ms_range", "tail_gap_ms", "start_spread_ms", "noise_avoids_motifs",
                  "decoy_rates"},
                 "synthetic");
      auto& o = c.synthetic;
      read_opt(s, "num_classes", o.num_classes);
      read_opt(s, "flows_per_class", o.flows_per_class);
      read_opt(s, "motifs_per_class", o.motifs_per_class);
      read_opt(s, "motif_jitter", o.motif_jitter);
      read_opt(s, "noise_value_range", o.noise_value_range);
      read_opt(s, "noise_len_range", o.noise_len_range);
      read_opt(s, "gap_ms_range", o.gap_ms_range);
      read_opt(s, "tail_gap_ms", o.tail_gap_ms);
      read_opt(s, "start_spread_ms", o.start_spread_ms);
      read_opt(s, "noise_avoids_motifs", o.noise_avoids_motifs);
      read_opt(s, "decoy_rates", o.decoy_rates);
    }
    if (j.contains("segments")) {
      const auto& s = j.at("segments");
      check_keys(s, {"min_len", "max_len"}, "segments");
      read_opt(s, "min_len", c.min_len);
      read_opt(s, "max_len", c.max_len);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      check_keys(m, {"embed_dim", "kernel", "channels", "conv_layers", "seq_len"}, "model");
      read_opt(m, "embed_dim", c.model.embed_dim);
      read_opt(m, "kernel", c.model.kernel);
      read_opt(m, "channels", c.model.channels);
      read_opt(m, "conv_layers", c.model.conv_layers);
      read_opt(m, "seq_len", c.model.seq_len);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      check_keys(t, {"epochs", "batch_size", "learning_rate", "patience"}, "train");
      read_opt(t, "epochs", c.train.epochs);
      read_opt(t, "batch_size", c.train.batch_size);
      read_opt(t, "learning_rate", c.train.learning_rate);
      read_opt(t, "patience", c.train.patience);
    }
    if (j.contains("extraction")) {
      check_keys(j.at("extraction"), {"threshold"}, "extraction");
      read_opt(j.at("extraction"), "threshold", c.extraction_threshold);
    }
    if (j.contains("clustering")) {
      const auto& k = j.at("clustering");
      check_keys(k, {"eps", "min_pts"}, "clustering");
      read_opt(k, "eps", c.dbscan_eps);
      read_opt(k, "min_pts", c.dbscan_min_pts);
    }
    read_opt(j, "score_threshold", c.score_threshold);
    if (j.contains("compile")) {
      const auto& k = j.at("compile");
      check_keys(k, {"tcam_budget", "sram_budget", "expansion_cap", "lenient_sram"}, "compile");
      read_opt(k, "tcam_budget", c.compile.tcam_budget);
      read_opt(k, "sram_budget", c.compile.sram_budget);
      read_opt(k, "expansion_cap", c.compile.expansion_cap);
      read_opt(k, "lenient_sram", c.compile.lenient_sram);
    }
    if (j.contains("backup")) {
      const auto& b = j.at("backup");
      check_keys(b, {"max_depth", "min_leaf"}, "backup");
      read_opt(b, "max_depth", c.backup.max_depth);
      read_opt(b, "min_leaf", c.backup.min_leaf);
    }
    if (j.contains("dataplane")) {
      const auto& d = j.at("dataplane");
      check_keys(d, {"pkt_max", "time_max_ms", "variant", "fidelity", "hash_slots", "install_delay"}, "dataplane");
      read_opt(d, "pkt_max", c.dataplane.pkt_max);
      read_opt(d, "time_max_ms", c.dataplane.time_max_ms);
      if (d.contains("variant")) c.dataplane.variant = parse_variant(d.at("variant").get<std::string>());
      if (d.contains("fidelity")) c.dataplane.fidelity = detail::parse_fidelity(d.at("fidelity").get<std::string>());
      read_opt(d, "hash_slots", c.dataplane.hash_slots);
      read_opt(d, "install_delay", c.dataplane.install_delay);
    }
    if (j.contains("sweep")) {
      check_keys(j.at("sweep"), {"thresholds"}, "sweep");
      read_opt(j.at("sweep"), "thresholds", c.sweep_thresholds);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline PipelineConfig load_config_file(const std::string& path, PipelineConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  return config_from_json(j, std::move(base));
}

// Environment overrides, each mirroring a command-line flag:
//   KSEG_CONFIG, KSEG_SEED, KSEG_VARIANT, KSEG_SCORE_THRESHOLD, KSEG_OUT
using EnvLookup = std::function<std::optional<std::string>(const char*)>;

inline std::optional<std::string> process_env(const char* name) {
  const char* v = std::getenv(name);
  if (!v) return std::nullopt;
  return std::string(v);
}

inline std::uint64_t parse_seed(const std::string& s) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty() || s[0] == '-') throw ConfigError("invalid seed '" + s + "'");
  return v;
}

inline double parse_threshold(const std::string& s) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty() || !(v >= 0)) throw ConfigError("invalid score threshold '" + s + "'");
  return v;
}

inline void apply_env_overrides(PipelineConfig& c, const EnvLookup& env = process_env) {
  if (auto v = env("KSEG_SEED")) c.seed = parse_seed(*v);
  if (auto v = env("KSEG_VARIANT")) c.dataplane.variant = parse_variant(*v);
  if (auto v = env("KSEG_SCORE_THRESHOLD")) c.score_threshold = parse_threshold(*v);
  if (auto v = env("KSEG_OUT")) c.out_dir = *v;
}

}  // namespace kseg
