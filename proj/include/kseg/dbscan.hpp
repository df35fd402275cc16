#pragma once

#include <algorithm>
#include <cstddef>
#include <deque>
#include <numeric>
#include <span>
#include <vector>

#include "kseg/error.hpp"

namespace kseg {

inline constexpr int kNoiseLabel = -1;

// Density clustering under Euclidean distance (neighbourhood: distance <= eps,
// the point itself included). Points are visited in input order and
// neighbours are expanded in ascending index order, so border points join the
// first cluster that reaches them. Labels are 0..k-1, noise is kNoiseLabel.
//
// Neighbourhood queries use a sort on the first coordinate to prune
// candidates before the full distance check.
inline std::vector<int> dbscan(std::span<const std::vector<double>> points, double eps,
                               std::size_t min_pts) {
  if (!(eps > 0)) throw ConfigError("dbscan eps must be > 0");
  if (min_pts < 1) throw ConfigError("dbscan min_pts must be >= 1");
  const std::size_t n = points.size();
  if (n == 0) return {};
  const std::size_t dim = points[0].size();
  for (const auto& p : points)
    if (p.size() != dim) throw ConfigError("dbscan points must share one dimension");

  std::vector<std::size_t> by_x(n);
  std::iota(by_x.begin(), by_x.end(), std::size_t{0});
  auto x0 = [&](std::size_t i) { return dim ? points[i][0] : 0.0; };
  std::stable_sort(by_x.begin(), by_x.end(), [&](std::size_t a, std::size_t b) { return x0(a) < x0(b); });
  std::vector<double> sorted_x(n);
  for (std::size_t k = 0; k < n; ++k) sorted_x[k] = x0(by_x[k]);

  const double eps2 = eps * eps;
  auto region = [&](std::size_t i) {
    std::vector<std::size_t> out;
    const double xi = x0(i);
    auto lo = std::lower_bound(sorted_x.begin(), sorted_x.end(), xi - eps);
    auto hi = std::upper_bound(sorted_x.begin(), sorted_x.end(), xi + eps);
    for (auto it = lo; it != hi; ++it) {
      const std::size_t j = by_x[static_cast<std::size_t>(it - sorted_x.begin())];
      double d2 = 0.0;
      for (std::size_t k = 0; k < dim && d2 <= eps2; ++k) {
        const double d = points[i][k] - points[j][k];
        d2 += d * d;
      }
      if (d2 <= eps2) out.push_back(j);
    }
    std::sort(out.begin(), out.end());
    return out;
  };

  constexpr int kUnvisited = -2;
  std::vector<int> labels(n, kUnvisited);
  int cluster = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != kUnvisited) continue;
    const auto seeds = region(i);
    if (seeds.size() < min_pts) {
      labels[i] = kNoiseLabel;
      continue;
    }
    labels[i] = cluster;
    std::deque<std::size_t> queue(seeds.begin(), seeds.end());
    while (!queue.empty()) {
      const std::size_t q = queue.front();
      queue.pop_front();
      if (labels[q] == kNoiseLabel) labels[q] = cluster;
      if (labels[q] != kUnvisited) continue;
      labels[q] = cluster;
      const auto nq = region(q);
      if (nq.size() >= min_pts) queue.insert(queue.end(), nq.begin(), nq.end());
    }
    ++cluster;
  }
  return labels;
}

}  // namespace kseg
