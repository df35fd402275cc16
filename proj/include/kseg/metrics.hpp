#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <set>
#include <span>

#include "kseg/error.hpp"
#include "kseg/traffic.hpp"

namespace kseg {

inline double accuracy(std::span<const ClassId> truth, std::span<const ClassId> predicted) {
  if (truth.size() != predicted.size()) throw InternalError("accuracy: size mismatch");
  if (truth.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) ok += truth[i] == predicted[i];
  return double(ok) / double(truth.size());
}

// Unweighted mean of per-class F1 over every class that occurs in either the
// truth or the predictions. A class with no true and no predicted positives
// never enters; one with precision + recall = 0 contributes 0.
inline double macro_f1(std::span<const ClassId> truth, std::span<const ClassId> predicted) {
  if (truth.size() != predicted.size()) throw InternalError("macro_f1: size mismatch");
  std::set<ClassId> classes(truth.begin(), truth.end());
  classes.insert(predicted.begin(), predicted.end());
  if (classes.empty()) return 0.0;
  std::map<ClassId, std::size_t> tp, fp, fn;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == predicted[i]) {
      ++tp[truth[i]];
    } else {
      ++fp[predicted[i]];
      ++fn[truth[i]];
    }
  }
  double sum = 0.0;
  for (ClassId c : classes) {
    const double t = double(tp[c]);
    const double denom = 2 * t + double(fp[c]) + double(fn[c]);
    sum += denom > 0 ? 2 * t / denom : 0.0;
  }
  return sum / double(classes.size());
}

}  // namespace kseg
