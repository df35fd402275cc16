#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "kseg/error.hpp"
#include "kseg/rng.hpp"
#include "kseg/traffic.hpp"

namespace kseg {

struct SplitRatios {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  std::vector<BidiFlow> train;
  std::vector<BidiFlow> validation;
  std::vector<BidiFlow> test;
  SplitRatios ratios;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

// Stratified by label (unlabeled flows form their own stratum). Within each
// class the flows are shuffled with `seed`; validation and test take
// round(n * ratio) flows each and train takes the remainder. Classes with
// fewer than three flows go entirely to train with a warning.
inline DatasetSplit split_dataset(std::span<const BidiFlow> flows, SplitRatios ratios,
                                  std::uint64_t seed) {
  if (ratios.train < 0 || ratios.validation < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9)
    throw ConfigError("split ratios must be non-negative and sum to 1");
  DatasetSplit out;
  out.ratios = ratios;
  out.seed = seed;
  std::map<ClassId, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < flows.size(); ++i) by_class[flows[i].label.value_or(-1)].push_back(i);
  Rng rng(seed);
  for (auto& [label, idx] : by_class) {
    if (idx.size() < 3) {
      out.warnings.push_back("class " + std::to_string(label) + " has " +
                             std::to_string(idx.size()) + " flow(s); assigned to train");
      for (auto i : idx) out.train.push_back(flows[i]);
      continue;
    }
    rng.shuffle(std::span<std::size_t>(idx));
    const double n = static_cast<double>(idx.size());
    const auto n_val = std::min(idx.size(), static_cast<std::size_t>(std::floor(n * ratios.validation + 0.5)));
    const auto n_test = std::min(idx.size() - n_val, static_cast<std::size_t>(std::floor(n * ratios.test + 0.5)));
    std::size_t k = 0;
    for (; k < n_val; ++k) out.validation.push_back(flows[idx[k]]);
    for (; k < n_val + n_test; ++k) out.test.push_back(flows[idx[k]]);
    for (; k < idx.size(); ++k) out.train.push_back(flows[idx[k]]);
  }
  return out;
}

}  // namespace kseg
