#pragma once

// Independent reference implementations and random generators shared by the
// unit tests and the acceptance binary. Nothing here calls the code under
// test except to build inputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "kseg/kseg.hpp"

namespace kseg::testing {

// Textbook O(n^2) DBSCAN: core points, connected components over core-core
// edges, clusters numbered by their smallest core index; a border point takes
// the lowest-numbered cluster among its core neighbours.
inline std::vector<int> naive_dbscan(const std::vector<std::vector<double>>& pts, double eps, std::size_t min_pts) {
  const std::size_t n = pts.size();
  std::vector<std::vector<std::size_t>> nb(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double d = 0;
      for (std::size_t k = 0; k < pts[i].size(); ++k) d += (pts[i][k] - pts[j][k]) * (pts[i][k] - pts[j][k]);
      if (std::sqrt(d) <= eps) nb[i].push_back(j);
    }
  std::vector<bool> core(n);
  for (std::size_t i = 0; i < n; ++i) core[i] = nb[i].size() >= min_pts;
  std::vector<int> comp(n, -1);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!core[i] || comp[i] >= 0) continue;
    std::vector<std::size_t> stack{i};
    comp[i] = next;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      for (auto q : nb[p])
        if (core[q] && comp[q] < 0) {
          comp[q] = next;
          stack.push_back(q);
        }
    }
    ++next;
  }
  std::vector<int> out(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i]) {
      out[i] = comp[i];
      continue;
    }
    int best = -1;
    for (auto q : nb[i])
      if (core[q] && (best < 0 || comp[q] < best)) best = comp[q];
    out[i] = best;
  }
  return out;
}

// Relabels clusters by first appearance so two labelings compare directly.
inline std::vector<int> canonical_labels(const std::vector<int>& labels) {
  std::map<int, int> remap;
  std::vector<int> out;
  for (int l : labels) {
    if (l < 0) {
      out.push_back(-1);
      continue;
    }
    auto it = remap.try_emplace(l, static_cast<int>(remap.size())).first;
    out.push_back(it->second);
  }
  return out;
}

// Every window, every position.
inline bool naive_contains(const std::vector<std::int16_t>& flow, const KeySegment& seg) {
  const std::size_t len = seg.effective_len;
  if (len == 0 || flow.size() < len) return false;
  for (std::size_t s = 0; s + len <= flow.size(); ++s) {
    bool all = true;
    for (std::size_t i = 0; i < len; ++i)
      if (!(seg.slots[i].wildcard || (flow[s + i] >= seg.slots[i].min && flow[s + i] <= seg.slots[i].max)))
        all = false;
    if (all) return true;
  }
  return false;
}

inline double gini_of(const std::vector<ClassId>& labels) {
  if (labels.empty()) return 0.0;
  std::map<ClassId, double> c;
  for (auto y : labels) c[y] += 1;
  double g = 1.0;
  for (auto& [k, v] : c) g -= (v / labels.size()) * (v / labels.size());
  return g;
}

struct NaiveSplit {
  bool found = false;
  double gain = 0.0;
  int feature = 0;
  std::int16_t threshold = 0;
  int ties = 0;  // candidates within 1e-12 of the best gain
};

// Every (feature, observed value) pair, x <= v going left.
inline NaiveSplit naive_best_split(const DtSamples& d, std::size_t min_leaf) {
  NaiveSplit best;
  const double parent = gini_of(d.labels);
  const std::size_t n = d.labels.size();
  for (std::size_t f = 0; f < d.features[0].size(); ++f) {
    std::set<std::int16_t> values;
    for (const auto& x : d.features) values.insert(x[f]);
    for (auto v : values) {
      std::vector<ClassId> l, r;
      for (std::size_t i = 0; i < n; ++i) (d.features[i][f] <= v ? l : r).push_back(d.labels[i]);
      if (l.size() < min_leaf || r.size() < min_leaf) continue;
      const double gain = parent - (double(l.size()) * gini_of(l) + double(r.size()) * gini_of(r)) / double(n);
      if (gain <= 1e-12) continue;
      if (!best.found || gain > best.gain + 1e-12) {
        best = {true, gain, static_cast<int>(f), v, 1};
      } else if (std::abs(gain - best.gain) <= 1e-12) {
        ++best.ties;
      }
    }
  }
  return best;
}

// Recursive descent over the node array.
inline ClassId walk_tree(const BackupTree& t, const std::vector<std::int16_t>& x, int node = 0) {
  const DtNode& n = t.nodes[static_cast<std::size_t>(node)];
  if (n.leaf) return n.label;
  return walk_tree(t, x, x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
}

inline std::int16_t signed_value(Rng& rng, const std::vector<int>& alphabet, int jitter) {
  int v = alphabet[rng.below(alphabet.size())] + static_cast<int>(rng.uniform_int(-jitter, jitter));
  if (v == 0) v = 1;
  return static_cast<std::int16_t>(std::clamp(v, -kMaxPacketLength, kMaxPacketLength));
}

// Random key segment over a small value alphabet so that random flows hit it.
inline KeySegment random_segment(Rng& rng, std::uint32_t id, int num_classes, std::size_t max_len,
                                 std::size_t min_len, const std::vector<int>& alphabet) {
  KeySegment s;
  s.id = id;
  s.class_id = static_cast<ClassId>(rng.below(static_cast<std::uint64_t>(num_classes)));
  s.effective_len = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(min_len),
                                                             static_cast<std::int64_t>(max_len)));
  s.slots.assign(max_len, SlotRange{true, 0, 0});
  for (std::size_t i = 0; i < s.effective_len; ++i) {
    std::set<std::int16_t> vals;
    const int k = static_cast<int>(rng.uniform_int(1, 3));
    for (int j = 0; j < k; ++j) vals.insert(signed_value(rng, alphabet, 8));
    s.slots[i] = {false, *vals.begin(), *vals.rbegin()};
    s.member_values.emplace_back(vals.begin(), vals.end());
  }
  s.score = double(rng.uniform_int(1, 40)) / 4.0;  // ties on purpose
  return s;
}

inline std::vector<KeySegment> random_segments(Rng& rng, std::size_t count, int num_classes, std::size_t max_len,
                                               std::size_t min_len, const std::vector<int>& alphabet) {
  std::vector<KeySegment> out;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(random_segment(rng, static_cast<std::uint32_t>(i), num_classes, max_len, min_len, alphabet));
  return out;
}

// Flows with unique keys, a positive first feature, and gaps that now and
// then exceed `long_gap`.
inline std::vector<BidiFlow> random_flows(Rng& rng, std::size_t count, int num_classes, std::size_t max_pkts,
                                          const std::vector<int>& alphabet, std::uint64_t long_gap) {
  std::vector<BidiFlow> out;
  std::uint64_t t0 = 0;
  for (std::size_t f = 0; f < count; ++f) {
    BidiFlow fl;
    const std::uint32_t a = 0x0a000000u + static_cast<std::uint32_t>(2 * f);
    const std::uint32_t b = a + 1;
    fl.key = canonical_key({a, b, static_cast<std::uint16_t>(1024 + f % 50000), 443, kProtoTcp});
    fl.first_src = rng.coin() ? a : b;
    fl.label = static_cast<ClassId>(rng.below(static_cast<std::uint64_t>(num_classes)));
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(max_pkts)));
    std::uint64_t ts = t0 + rng.below(1000);
    t0 += rng.below(50);
    for (std::size_t i = 0; i < n; ++i) {
      std::int16_t v = signed_value(rng, alphabet, 8);
      if (i == 0) v = static_cast<std::int16_t>(std::abs(v));
      fl.packets.push_back({ts, SignedFeature::from_value(v)});
      ts += rng.below(16) == 0 ? long_gap + 1 + rng.below(100) : rng.below(long_gap / 2 + 1);
    }
    out.push_back(std::move(fl));
  }
  return out;
}

inline BackupTree random_tree(Rng& rng, std::size_t max_len, int num_classes, const std::vector<int>& alphabet) {
  DtSamples d;
  for (int i = 0; i < 200; ++i) {
    std::vector<std::int16_t> x(max_len);
    const std::size_t zeros = rng.below(max_len);
    for (std::size_t k = 0; k < max_len; ++k) x[k] = k < zeros ? 0 : signed_value(rng, alphabet, 8);
    d.features.push_back(std::move(x));
    d.labels.push_back(static_cast<ClassId>(rng.below(static_cast<std::uint64_t>(num_classes))));
  }
  return train_dt(d, {4, 3});
}

inline const std::vector<int>& small_alphabet() {
  static const std::vector<int> a{100, -100, 300, -300, 700, -700, 1200, -1200};
  return a;
}

// Central differences of one scalar function of the model's parameters.
template <class F>
double central_difference(nn::CnnModel& m, std::size_t tensor, std::size_t index, F&& objective, double h = 1e-5) {
  auto params = m.parameters();
  double& w = params[tensor][index];
  const double saved = w;
  w = saved + h;
  const double up = objective(m);
  w = saved - h;
  const double down = objective(m);
  w = saved;
  return (up - down) / (2 * h);
}

// Small random CNN with perturbed weights and a random valid input.
struct TinyCase {
  nn::CnnModel model;
  nn::TokenSequence seq;
  int target;
};

inline TinyCase random_tiny(Rng& rng) {
  nn::ModelShape s;
  s.vocab = static_cast<int>(rng.uniform_int(4, 9));
  s.embed_dim = static_cast<int>(rng.uniform_int(1, 3));
  s.channels = static_cast<int>(rng.uniform_int(1, 3));
  s.kernel = 2 * static_cast<int>(rng.uniform_int(0, 2)) + 1;
  s.conv_layers = static_cast<int>(rng.uniform_int(1, 2));
  s.num_classes = static_cast<int>(rng.uniform_int(2, 4));
  s.seq_len = static_cast<int>(rng.uniform_int(3, 6));
  TinyCase t{nn::CnnModel::initialized(s, rng.next_u64()), {}, 0};
  for (auto p : t.model.parameters())
    for (auto& w : p) w += rng.uniform_real(-0.3, 0.3);
  t.model.embedding.row(nn::kPadId).setZero();
  t.seq.ids.assign(static_cast<std::size_t>(s.seq_len), nn::kPadId);
  t.seq.valid_len = static_cast<std::size_t>(rng.uniform_int(1, s.seq_len));
  for (std::size_t p = 0; p < t.seq.valid_len; ++p) t.seq.ids[p] = static_cast<int>(rng.uniform_int(1, s.vocab - 1));
  t.target = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.num_classes)));
  return t;
}

inline bool near_kink(const nn::CnnModel& m, const nn::TokenSequence& seq) {
  const auto cache = nn::forward(m, seq);
  for (const auto& z : cache.pre)
    if ((z.array().abs() < 1e-3).any()) return true;
  return false;
}

}  // namespace kseg::testing
