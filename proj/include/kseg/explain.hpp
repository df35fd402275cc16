#pragma once

// Grad-CAM over input positions and extraction of high-importance runs into
// candidate segments.

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>
#include <nlohmann/json.hpp>

#include "kseg/error.hpp"
#include "kseg/nn/model.hpp"
#include "kseg/traffic.hpp"

namespace kseg {

struct ImportanceMap {
  std::vector<double> scores;  // one per input position, 0 at pads
  std::size_t valid_len = 0;
};

// Inclusive index range [first, last].
struct Run {
  std::size_t first = 0;
  std::size_t last = 0;
  std::size_t length() const { return last - first + 1; }
  friend bool operator==(const Run&, const Run&) = default;
};

struct CandidateSegment {
  ClassId class_id = 0;
  std::vector<std::int16_t> values;
  std::size_t start = 0;  // offset in the originating flow
  double cumulative_importance = 0.0;
  std::size_t source_flow = 0;  // index into the harvested set

  friend bool operator==(const CandidateSegment&, const CandidateSegment&) = default;
};

struct ExtractionConfig {
  double threshold = 0.5;  // t
  std::size_t min_len = 2;  // L_min
  std::size_t max_len = 4;  // L_max
};

// Channel weights alpha_k: d(logit_c)/d(A_k) averaged over the sample's
// valid positions, A being the last convolution's post-ReLU output.
inline nn::Vector gradcam_weights(const nn::CnnModel& model, const nn::ForwardCache& cache,
                                  ClassId class_id, std::size_t sample = 0) {
  if (class_id < 0 || class_id >= model.shape.num_classes)
    throw ConfigError("Grad-CAM class " + std::to_string(class_id) + " out of range");
  if (sample >= cache.samples()) throw InternalError("Grad-CAM sample out of range");
  nn::Matrix seed = nn::Matrix::Zero(static_cast<Eigen::Index>(cache.samples()), model.shape.num_classes);
  seed(static_cast<Eigen::Index>(sample), class_id) = 1.0;
  const nn::Matrix grad = nn::feature_map_gradient(model, cache, seed);
  const Eigen::Index a = cache.row_offset[sample], b = cache.row_offset[sample + 1];
  if (b == a) return nn::Vector::Zero(model.shape.channels);
  return (grad.middleRows(a, b - a).colwise().sum() / double(b - a)).transpose();
}

inline ImportanceMap gradcam(const nn::CnnModel& model, const nn::ForwardCache& cache,
                             ClassId class_id, std::size_t sample = 0) {
  const nn::Vector alpha = gradcam_weights(model, cache, class_id, sample);
  ImportanceMap map;
  map.valid_len = cache.inputs[sample].valid_len;
  map.scores.assign(cache.inputs[sample].ids.size(), 0.0);
  const Eigen::Index a = cache.row_offset[sample];
  const auto& fm = cache.post.back();
  for (std::size_t p = 0; p < map.valid_len; ++p)
    map.scores[p] = std::max(0.0, fm.row(a + static_cast<Eigen::Index>(p)).dot(alpha));
  return map;
}

// Grad-CAM for every sample of a batch at once, sample i against classes[i].
// Samples do not interact, so one backward pass seeded with all the one-hot
// rows yields each sample's gradient in its own rows.
inline std::vector<ImportanceMap> gradcam_batch(const nn::CnnModel& model, const nn::ForwardCache& cache,
                                                std::span<const ClassId> classes) {
  if (classes.size() != cache.samples()) throw InternalError("one class per sample required");
  nn::Matrix seed = nn::Matrix::Zero(static_cast<Eigen::Index>(cache.samples()), model.shape.num_classes);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] < 0 || classes[i] >= model.shape.num_classes)
      throw ConfigError("Grad-CAM class " + std::to_string(classes[i]) + " out of range");
    seed(static_cast<Eigen::Index>(i), classes[i]) = 1.0;
  }
  const nn::Matrix grad = nn::feature_map_gradient(model, cache, seed);
  const auto& fm = cache.post.back();
  std::vector<ImportanceMap> maps(classes.size());
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const Eigen::Index a = cache.row_offset[i], b = cache.row_offset[i + 1];
    ImportanceMap& map = maps[i];
    map.valid_len = cache.inputs[i].valid_len;
    map.scores.assign(cache.inputs[i].ids.size(), 0.0);
    if (b == a) continue;
    const nn::Vector alpha = (grad.middleRows(a, b - a).colwise().sum() / double(b - a)).transpose();
    for (std::size_t p = 0; p < map.valid_len; ++p)
      map.scores[p] = std::max(0.0, fm.row(a + static_cast<Eigen::Index>(p)).dot(alpha));
  }
  return maps;
}

// Maximal runs of valid positions whose score strictly exceeds mean + t * sd,
// with population statistics over the valid positions.
inline std::vector<Run> extract_runs(const ImportanceMap& map, double t) {
  std::vector<Run> runs;
  const std::size_t n = std::min(map.valid_len, map.scores.size());
  if (n == 0) return runs;
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += map.scores[i];
  mean /= double(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) var += (map.scores[i] - mean) * (map.scores[i] - mean);
  const double threshold = mean + t * std::sqrt(var / double(n));
  std::size_t i = 0;
  while (i < n) {
    if (map.scores[i] > threshold) {
      std::size_t j = i;
      while (j + 1 < n && map.scores[j + 1] > threshold) ++j;
      runs.push_back({i, j});
      i = j + 1;
    } else {
      ++i;
    }
  }
  return runs;
}

// Runs shorter than min_len are dropped, runs within [min_len, max_len] are
// kept whole, longer ones are cut to the max_len window with the largest
// cumulative score (leftmost on ties).
inline std::vector<CandidateSegment> clip_runs(const Run& run, std::span<const double> scores,
                                               std::span<const std::int16_t> features,
                                               const ExtractionConfig& cfg, ClassId class_id = 0) {
  std::vector<CandidateSegment> out;
  if (run.last < run.first || run.last >= scores.size() || run.last >= features.size())
    throw InternalError("run outside flow bounds");
  const std::size_t len = run.length();
  if (len < cfg.min_len) return out;
  std::size_t start = run.first;
  std::size_t width = len;
  if (len > cfg.max_len) {
    width = cfg.max_len;
    double best = -1.0;
    for (std::size_t s = run.first; s + width <= run.last + 1; ++s) {
      double sum = 0.0;
      for (std::size_t k = 0; k < width; ++k) sum += scores[s + k];
      if (sum > best) {
        best = sum;
        start = s;
      }
    }
  }
  CandidateSegment seg;
  seg.class_id = class_id;
  seg.start = start;
  for (std::size_t k = 0; k < width; ++k) {
    seg.values.push_back(features[start + k]);
    seg.cumulative_importance += scores[start + k];
  }
  out.push_back(std::move(seg));
  return out;
}

struct CandidatePool {
  std::vector<std::vector<CandidateSegment>> by_class;

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& c : by_class) n += c.size();
    return n;
  }
};

// Grad-CAM against each flow's true label, then run extraction and clipping.
inline CandidatePool harvest_candidates(const nn::CnnModel& model, std::span<const BidiFlow> flows,
                                        const ExtractionConfig& cfg, std::size_t batch = 256) {
  CandidatePool pool;
  pool.by_class.resize(static_cast<std::size_t>(model.shape.num_classes));
  const auto n = static_cast<std::size_t>(model.shape.seq_len);
  std::vector<std::size_t> index;
  for (std::size_t i = 0; i < flows.size(); ++i)
    if (flows[i].label) index.push_back(i);
  for (std::size_t start = 0; start < index.size(); start += batch) {
    const std::size_t end = std::min(index.size(), start + batch);
    std::vector<nn::TokenSequence> seqs;
    for (std::size_t k = start; k < end; ++k) seqs.push_back(nn::encode_sequence(flows[index[k]], n));
    const nn::ForwardCache cache = nn::forward_batch(model, seqs);
    std::vector<ClassId> classes;
    for (std::size_t k = start; k < end; ++k) {
      const ClassId c = *flows[index[k]].label;
      if (c >= model.shape.num_classes) throw ConfigError("flow label exceeds model classes");
      classes.push_back(c);
    }
    const auto maps = gradcam_batch(model, cache, classes);
    for (std::size_t k = start; k < end; ++k) {
      const BidiFlow& flow = flows[index[k]];
      const ClassId c = classes[k - start];
      const ImportanceMap& map = maps[k - start];
      const auto features = flow.features(n);
      for (const Run& run : extract_runs(map, cfg.threshold)) {
        for (auto& seg : clip_runs(run, map.scores, features, cfg, c)) {
          seg.source_flow = index[k];
          pool.by_class[static_cast<std::size_t>(c)].push_back(std::move(seg));
        }
      }
    }
  }
  return pool;
}

// One JSON object per line: {"class":..,"start":..,"values":[..],"cum_score":..,"flow":..}
inline void write_candidates(std::ostream& out, const CandidatePool& pool) {
  for (const auto& cls : pool.by_class) {
    for (const auto& c : cls) {
      nlohmann::ordered_json j;
      j["class"] = c.class_id;
      j["start"] = c.start;
      j["values"] = c.values;
      j["cum_score"] = c.cumulative_importance;
      j["flow"] = c.source_flow;
      out << j.dump() << '\n';
    }
  }
}

inline CandidatePool read_candidates(std::istream& in, int num_classes) {
  CandidatePool pool;
  pool.by_class.resize(static_cast<std::size_t>(num_classes));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CandidateSegment c;
      c.class_id = j.at("class").get<ClassId>();
      c.start = j.at("start").get<std::size_t>();
      c.values = j.at("values").get<std::vector<std::int16_t>>();
      c.cumulative_importance = j.at("cum_score").get<double>();
      c.source_flow = j.value("flow", std::size_t{0});
      if (c.class_id < 0 || c.class_id >= num_classes) throw ParseError("class out of range", line_no);
      pool.by_class[static_cast<std::size_t>(c.class_id)].push_back(std::move(c));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return pool;
}

}  // namespace kseg
