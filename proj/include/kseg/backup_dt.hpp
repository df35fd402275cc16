#pragma once

// CART-style decision tree over the first L_max signed features, used as the
// backup classifier when no key segment matches.

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>
#include <nlohmann/json.hpp>

#include "kseg/error.hpp"
#include "kseg/traffic.hpp"

namespace kseg {

struct DtParams {
  int max_depth = 8;
  std::size_t min_leaf = 5;
};

struct DtNode {
  bool leaf = true;
  ClassId label = 0;  // leaves
  int feature = 0;    // internal nodes: go left iff x[feature] <= threshold
  std::int16_t threshold = 0;
  int left = -1;
  int right = -1;

  friend bool operator==(const DtNode&, const DtNode&) = default;
};

struct BackupTree {
  std::size_t num_features = 4;
  int max_depth = 8;
  std::vector<DtNode> nodes;  // nodes[0] is the root

  int depth() const {
    if (nodes.empty()) return 0;
    std::vector<std::pair<int, int>> stack{{0, 0}};
    int best = 0;
    while (!stack.empty()) {
      auto [n, d] = stack.back();
      stack.pop_back();
      best = std::max(best, d);
      if (!nodes[static_cast<std::size_t>(n)].leaf) {
        stack.push_back({nodes[static_cast<std::size_t>(n)].left, d + 1});
        stack.push_back({nodes[static_cast<std::size_t>(n)].right, d + 1});
      }
    }
    return best;
  }

  friend bool operator==(const BackupTree&, const BackupTree&) = default;
};

// The feature vector the tree sees: the flow's window register after its
// first min(k, L_max) packets, i.e. those features right-aligned with zeros
// on the left when the flow is shorter than L_max.
inline std::vector<std::int16_t> dt_features(std::span<const std::int16_t> flow_features, std::size_t max_len) {
  std::vector<std::int16_t> window(max_len, 0);
  const std::size_t k = std::min(max_len, flow_features.size());
  for (std::size_t i = 0; i < k; ++i) window[max_len - k + i] = flow_features[i];
  return window;
}

struct DtSamples {
  std::vector<std::vector<std::int16_t>> features;
  std::vector<ClassId> labels;
};

inline DtSamples dt_samples(std::span<const BidiFlow> flows, std::size_t max_len) {
  DtSamples s;
  for (const auto& f : flows) {
    if (!f.label) continue;
    s.features.push_back(dt_features(f.features(max_len), max_len));
    s.labels.push_back(*f.label);
  }
  return s;
}

struct DtSplit {
  bool found = false;
  int feature = 0;
  std::int16_t threshold = 0;
  double gain = 0.0;
};

namespace detail {

using Counts = std::map<ClassId, std::size_t>;

inline std::uint64_t sum_squares(const Counts& c) {
  std::uint64_t s = 0;
  for (const auto& [k, v] : c) s += std::uint64_t{v} * v;
  return s;
}

inline double gini(const Counts& c, std::size_t n) {
  if (n == 0) return 0.0;
  return 1.0 - double(sum_squares(c)) / (double(n) * double(n));
}

inline ClassId majority(const Counts& c) {
  ClassId best = 0;
  std::size_t best_n = 0;
  for (const auto& [k, v] : c)
    if (v > best_n) {
      best = k;
      best_n = v;
    }
  return best;
}

}  // namespace detail

// Best axis-aligned split by Gini gain among splits leaving at least
// `min_leaf` samples on each side. Candidates are compared exactly (the
// weighted child impurity is a rational in integer counts), so ties resolve
// to the lowest feature index, then the lowest threshold.
inline DtSplit best_split(const DtSamples& data, std::span<const std::size_t> idx, std::size_t min_leaf) {
  DtSplit best;
  const std::size_t n = idx.size();
  if (n == 0) return best;
  detail::Counts parent;
  for (auto i : idx) ++parent[data.labels[i]];
  const std::uint64_t parent_sq = detail::sum_squares(parent);
  // Q = S_l/n_l + S_r/n_r; a split improves on the parent iff Q > S_p/n.
  unsigned __int128 best_num = 0, best_den = 1;
  bool have = false;
  const std::size_t dims = data.features.empty() ? 0 : data.features[idx[0]].size();
  std::vector<std::size_t> order(idx.begin(), idx.end());
  for (std::size_t f = 0; f < dims; ++f) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return data.features[a][f] < data.features[b][f]; });
    detail::Counts left, right = parent;
    std::uint64_t left_sq = 0, right_sq = parent_sq;
    for (std::size_t k = 0; k + 1 < n; ++k) {
      const ClassId y = data.labels[order[k]];
      left_sq += 2 * left[y] + 1;
      ++left[y];
      right_sq -= 2 * right[y] - 1;
      --right[y];
      const std::int16_t v = data.features[order[k]][f];
      if (data.features[order[k + 1]][f] == v) continue;
      const std::uint64_t nl = k + 1, nr = n - nl;
      if (nl < min_leaf || nr < min_leaf) continue;
      const unsigned __int128 num = (unsigned __int128)left_sq * nr + (unsigned __int128)right_sq * nl;
      const unsigned __int128 den = (unsigned __int128)nl * nr;
      // Must beat the parent strictly.
      if (!(num * n > (unsigned __int128)parent_sq * den)) continue;
      if (!have || num * best_den > best_num * den) {
        have = true;
        best_num = num;
        best_den = den;
        best.found = true;
        best.feature = static_cast<int>(f);
        best.threshold = v;
        best.gain = detail::gini(parent, n) -
                    ((double(nl) - double(left_sq) / double(nl)) + (double(nr) - double(right_sq) / double(nr))) /
                        double(n);
      }
    }
  }
  return best;
}

inline BackupTree train_dt(const DtSamples& data, const DtParams& params = {},
                           std::vector<std::string>* warnings = nullptr) {
  if (data.features.size() != data.labels.size()) throw ConfigError("feature/label count mismatch");
  if (data.features.empty()) throw TrainingError("decision tree needs at least one sample");
  if (params.max_depth < 0 || params.min_leaf < 1) throw ConfigError("invalid decision tree parameters");
  BackupTree tree;
  tree.num_features = data.features[0].size();
  tree.max_depth = params.max_depth;
  for (const auto& f : data.features)
    if (f.size() != tree.num_features) throw ConfigError("samples differ in feature count");
  {
    std::vector<ClassId> l = data.labels;
    std::sort(l.begin(), l.end());
    if (std::unique(l.begin(), l.end()) - l.begin() < 2 && warnings)
      warnings->push_back("decision tree trained on a single class; tree is a single leaf");
  }

  struct Work {
    int node;
    int depth;
    std::vector<std::size_t> idx;
  };
  std::vector<std::size_t> all(data.features.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  tree.nodes.push_back({});
  std::vector<Work> stack;
  stack.push_back({0, 0, std::move(all)});
  while (!stack.empty()) {
    Work w = std::move(stack.back());
    stack.pop_back();
    detail::Counts counts;
    for (auto i : w.idx) ++counts[data.labels[i]];
    DtNode& node = tree.nodes[static_cast<std::size_t>(w.node)];
    node.leaf = true;
    node.label = detail::majority(counts);
    if (w.depth >= params.max_depth || counts.size() < 2 || w.idx.size() < 2 * params.min_leaf) continue;
    const DtSplit split = best_split(data, w.idx, params.min_leaf);
    if (!split.found) continue;
    std::vector<std::size_t> left, right;
    for (auto i : w.idx)
      (data.features[i][static_cast<std::size_t>(split.feature)] <= split.threshold ? left : right).push_back(i);
    const int l = static_cast<int>(tree.nodes.size());
    const int r = l + 1;
    tree.nodes.push_back({});
    tree.nodes.push_back({});
    DtNode& parent = tree.nodes[static_cast<std::size_t>(w.node)];
    parent.leaf = false;
    parent.label = 0;  // internal nodes carry no label
    parent.feature = split.feature;
    parent.threshold = split.threshold;
    parent.left = l;
    parent.right = r;
    stack.push_back({r, w.depth + 1, std::move(right)});
    stack.push_back({l, w.depth + 1, std::move(left)});
  }
  return tree;
}

inline ClassId dt_predict(const BackupTree& tree, std::span<const std::int16_t> features) {
  if (tree.nodes.empty()) throw ConfigError("empty decision tree");
  std::size_t n = 0;
  for (;;) {
    const DtNode& node = tree.nodes[n];
    if (node.leaf) return node.label;
    const auto f = static_cast<std::size_t>(node.feature);
    const std::int16_t x = f < features.size() ? features[f] : 0;
    n = static_cast<std::size_t>(x <= node.threshold ? node.left : node.right);
  }
}

// Nested dump: {"feature":0,"threshold":-120,"left":{...},"right":{...}} or {"leaf":3}.
inline nlohmann::ordered_json tree_node_to_json(const BackupTree& t, std::size_t n) {
  const DtNode& node = t.nodes[n];
  nlohmann::ordered_json j;
  if (node.leaf) {
    j["leaf"] = node.label;
    return j;
  }
  j["feature"] = node.feature;
  j["threshold"] = node.threshold;
  j["left"] = tree_node_to_json(t, static_cast<std::size_t>(node.left));
  j["right"] = tree_node_to_json(t, static_cast<std::size_t>(node.right));
  return j;
}

inline nlohmann::ordered_json tree_to_json(const BackupTree& t) {
  nlohmann::ordered_json j;
  j["format"] = "kseg-tree";
  j["version"] = 1;
  j["num_features"] = t.num_features;
  j["max_depth"] = t.max_depth;
  j["root"] = tree_node_to_json(t, 0);
  return j;
}

inline BackupTree tree_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "kseg-tree") throw FormatError("not a tree dump");
    if (j.at("version").get<int>() != 1) throw FormatError("unsupported tree dump version");
    BackupTree t;
    t.num_features = j.at("num_features").get<std::size_t>();
    t.max_depth = j.at("max_depth").get<int>();
    struct Item {
      const nlohmann::json* node;
      int index;
      int depth;
    };
    t.nodes.push_back({});
    std::vector<Item> stack{{&j.at("root"), 0, 0}};
    while (!stack.empty()) {
      Item it = stack.back();
      stack.pop_back();
      if (it.depth > t.max_depth) throw FormatError("tree deeper than its max_depth");
      const auto& jn = *it.node;
      DtNode node;
      if (jn.contains("leaf")) {
        node.leaf = true;
        node.label = jn.at("leaf").get<ClassId>();
      } else {
        node.leaf = false;
        node.feature = jn.at("feature").get<int>();
        if (node.feature < 0 || static_cast<std::size_t>(node.feature) >= t.num_features)
          throw FormatError("tree feature index out of range");
        node.threshold = jn.at("threshold").get<std::int16_t>();
        node.left = static_cast<int>(t.nodes.size());
        node.right = node.left + 1;
        t.nodes.push_back({});
        t.nodes.push_back({});
        stack.push_back({&jn.at("right"), node.right, it.depth + 1});
        stack.push_back({&jn.at("left"), node.left, it.depth + 1});
      }
      t.nodes[static_cast<std::size_t>(it.index)] = node;
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("tree dump: ") + e.what());
  }
}

}  // namespace kseg
