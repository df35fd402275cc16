#pragma once

// Seedable planted-motif traffic generator. Each class owns one or more short
// motifs; a generated flow is random noise packets with one of its class's
// motifs (jittered per position) inserted at a uniform random offset, plus
// optional decoy copies of other classes' motifs.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kseg/error.hpp"
#include "kseg/rng.hpp"
#include "kseg/traffic.hpp"

namespace kseg {

using Motif = std::vector<std::int16_t>;

struct SynthConfig {
  int num_classes = 2;
  int flows_per_class = 100;
  std::vector<std::vector<Motif>> planted_motifs;  // [class][motif]
  std::pair<int, int> noise_value_range{40, 1500};  // magnitude, inclusive
  std::pair<int, int> noise_len_range{4, 20};       // noise packets per flow
  int motif_jitter = 32;
  // Reject noise values that fall inside any class's jittered motif range.
  bool noise_avoids_motifs = true;
  std::pair<std::uint64_t, std::uint64_t> gap_ms_range{1, 40};
  // When non-zero, the last packet of each flow arrives after this idle gap.
  std::uint64_t tail_gap_ms = 0;
  std::uint64_t start_spread_ms = 60'000;
  // decoy_rates[c]: probability that a flow of another class also carries
  // one of class c's motifs. Empty means no decoys.
  std::vector<double> decoy_rates;
  std::uint64_t seed = 1;
};

struct SyntheticDataset {
  std::vector<BidiFlow> flows;
  std::vector<std::size_t> motif_offsets;  // packet index where the motif starts
  std::vector<std::size_t> motif_ids;      // index into planted_motifs[label]
};

namespace detail {

inline bool ranges_overlap(int a, int b, int jitter) { return std::abs(a - b) <= 2 * jitter; }

// True when some alignment of the shorter motif inside the longer one has
// overlapping jittered ranges at every position.
inline bool motifs_conflict(const Motif& a, const Motif& b, int jitter) {
  const Motif& shorter = a.size() <= b.size() ? a : b;
  const Motif& longer = a.size() <= b.size() ? b : a;
  for (std::size_t off = 0; off + shorter.size() <= longer.size(); ++off) {
    bool all = true;
    for (std::size_t i = 0; i < shorter.size() && all; ++i)
      all = ranges_overlap(shorter[i], longer[off + i], jitter);
    if (all) return true;
  }
  return false;
}

inline bool in_any_motif_range(const SynthConfig& cfg, int value) {
  for (const auto& motifs : cfg.planted_motifs)
    for (const auto& m : motifs)
      for (auto v : m)
        if (std::abs(v - value) <= cfg.motif_jitter) return true;
  return false;
}

}  // namespace detail

inline void validate(const SynthConfig& cfg) {
  if (cfg.num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (cfg.flows_per_class < 1) throw ConfigError("flows_per_class must be >= 1");
  if (static_cast<int>(cfg.planted_motifs.size()) != cfg.num_classes)
    throw ConfigError("planted_motifs must list motifs for every class");
  const auto [nlo, nhi] = cfg.noise_value_range;
  if (nlo < 1 || nhi > kMaxPacketLength || nlo > nhi)
    throw ConfigError("noise_value_range must lie within [1, 1500]");
  if (cfg.noise_len_range.first < 0 || cfg.noise_len_range.first > cfg.noise_len_range.second)
    throw ConfigError("bad noise_len_range");
  if (cfg.motif_jitter < 0) throw ConfigError("motif_jitter must be >= 0");
  if (cfg.gap_ms_range.first > cfg.gap_ms_range.second) throw ConfigError("bad gap_ms_range");
  if (!cfg.decoy_rates.empty()) {
    if (static_cast<int>(cfg.decoy_rates.size()) != cfg.num_classes)
      throw ConfigError("decoy_rates must list one rate per class");
    for (double r : cfg.decoy_rates)
      if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("decoy rates must lie in [0, 1]");
  }
  for (int c = 0; c < cfg.num_classes; ++c) {
    if (cfg.planted_motifs[c].empty())
      throw ConfigError("class " + std::to_string(c) + " has no motif");
    for (const auto& m : cfg.planted_motifs[c]) {
      if (m.size() < 2 || m.size() > 4) throw ConfigError("motif length must be in [2, 4]");
      for (auto v : m) {
        const int mag = std::abs(int{v});
        if (v == 0 || mag - cfg.motif_jitter < 1 || mag + cfg.motif_jitter > kMaxPacketLength)
          throw ConfigError("motif value " + std::to_string(v) + " leaves [1, 1500] under jitter");
      }
      if (m.front() < 0 && cfg.noise_len_range.second == 0)
        throw ConfigError("motif starting with a reverse packet needs at least one noise packet");
    }
  }
  for (int a = 0; a < cfg.num_classes; ++a)
    for (int b = a + 1; b < cfg.num_classes; ++b)
      for (const auto& ma : cfg.planted_motifs[a])
        for (const auto& mb : cfg.planted_motifs[b])
          if (detail::motifs_conflict(ma, mb, cfg.motif_jitter))
            throw ConfigError("motifs of classes " + std::to_string(a) + " and " +
                              std::to_string(b) + " overlap under jitter");
  if (cfg.noise_avoids_motifs) {
    int allowed = 0;
    for (int v = nlo; v <= nhi && allowed == 0; ++v)
      if (!detail::in_any_motif_range(cfg, v) || !detail::in_any_motif_range(cfg, -v)) ++allowed;
    if (allowed == 0) throw ConfigError("noise range fully covered by motif ranges");
  }
}

// Random motif sets that pass validate(): lengths uniform in [2, 4], values
// uniform in magnitude over [200, 1400] with random direction.
inline std::vector<std::vector<Motif>> make_random_motifs(int num_classes, int motifs_per_class,
                                                          int jitter, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x6d6f74));
  std::vector<std::vector<Motif>> out(num_classes);
  std::vector<std::pair<int, Motif>> placed;
  for (int c = 0; c < num_classes; ++c) {
    for (int k = 0; k < motifs_per_class; ++k) {
      for (int attempt = 0;; ++attempt) {
        if (attempt > 10'000) throw ConfigError("could not place non-overlapping motifs");
        Motif m(static_cast<std::size_t>(rng.uniform_int(2, 4)));
        for (auto& v : m) {
          const int mag = static_cast<int>(rng.uniform_int(200, 1400));
          v = static_cast<std::int16_t>(rng.coin() ? mag : -mag);
        }
        bool ok = true;
        for (const auto& [pc, pm] : placed)
          if (pc != c && detail::motifs_conflict(pm, m, jitter)) ok = false;
        if (!ok) continue;
        placed.emplace_back(c, m);
        out[c].push_back(std::move(m));
        break;
      }
    }
  }
  return out;
}

inline SyntheticDataset generate_synthetic(const SynthConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  SyntheticDataset ds;

  auto noise_value = [&](bool force_forward) -> std::int16_t {
    for (;;) {
      int v = static_cast<int>(rng.uniform_int(cfg.noise_value_range.first,
                                               cfg.noise_value_range.second));
      if (!force_forward && rng.coin()) v = -v;
      if (cfg.noise_avoids_motifs && detail::in_any_motif_range(cfg, v)) continue;
      return static_cast<std::int16_t>(v);
    }
  };

  std::uint32_t flow_index = 0;
  for (int c = 0; c < cfg.num_classes; ++c) {
    for (int i = 0; i < cfg.flows_per_class; ++i, ++flow_index) {
      const auto& motifs = cfg.planted_motifs[c];
      const std::size_t motif_id = static_cast<std::size_t>(rng.below(motifs.size()));
      const auto noise_len = static_cast<std::size_t>(
          rng.uniform_int(cfg.noise_len_range.first, cfg.noise_len_range.second));
      // Blocks to embed: the flow's own motif first, then any decoys.
      std::vector<const Motif*> blocks{&motifs[motif_id]};
      for (int d = 0; d < static_cast<int>(cfg.decoy_rates.size()); ++d) {
        if (d == c || !(rng.uniform01() < cfg.decoy_rates[d])) continue;
        const auto& dm = cfg.planted_motifs[d];
        blocks.push_back(&dm[static_cast<std::size_t>(rng.below(dm.size()))]);
      }
      bool needs_lead = false;
      for (auto* b : blocks) needs_lead = needs_lead || b->front() < 0;
      const std::size_t noise_total = std::max<std::size_t>(noise_len, needs_lead ? 1 : 0);
      // Block b goes after cut[b] noise packets; ties keep block order.
      std::vector<std::size_t> cut(blocks.size());
      for (std::size_t b = 0; b < blocks.size(); ++b) {
        const std::size_t lo = blocks[b]->front() < 0 ? 1 : 0;
        cut[b] = static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(noise_total)));
      }
      std::vector<std::size_t> order(blocks.size());
      for (std::size_t b = 0; b < order.size(); ++b) order[b] = b;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cut[a] < cut[b]; });

      std::vector<std::int16_t> values;
      std::size_t offset = 0;
      std::size_t noise_done = 0;
      auto put_noise_until = [&](std::size_t upto) {
        for (; noise_done < upto; ++noise_done) values.push_back(noise_value(values.empty()));
      };
      for (std::size_t b : order) {
        put_noise_until(cut[b]);
        if (b == 0) offset = values.size();
        for (auto v : *blocks[b]) {
          const int jit = static_cast<int>(rng.uniform_int(-cfg.motif_jitter, cfg.motif_jitter));
          const int mag = std::abs(int{v}) + jit;
          values.push_back(static_cast<std::int16_t>(v < 0 ? -mag : mag));
        }
      }
      put_noise_until(noise_total);

      BidiFlow flow;
      const std::uint32_t client = 0x0A000000u | (flow_index + 1);
      const std::uint32_t server = 0xAC100000u | static_cast<std::uint32_t>(rng.below(1u << 16));
      const auto client_port = static_cast<std::uint16_t>(rng.uniform_int(1024, 65535));
      const FiveTuple fwd{client, server, client_port, 443, kProtoTcp};
      flow.key = canonical_key(fwd);
      flow.first_src = client;
      flow.label = c;
      std::uint64_t ts = rng.below(cfg.start_spread_ms + 1);
      for (std::size_t k = 0; k < values.size(); ++k) {
        if (k > 0) {
          if (cfg.tail_gap_ms > 0 && k + 1 == values.size())
            ts += cfg.tail_gap_ms;
          else
            ts += static_cast<std::uint64_t>(rng.uniform_int(
                static_cast<std::int64_t>(cfg.gap_ms_range.first),
                static_cast<std::int64_t>(cfg.gap_ms_range.second)));
        }
        flow.packets.push_back({ts, SignedFeature::from_value(values[k])});
      }
      ds.flows.push_back(std::move(flow));
      ds.motif_offsets.push_back(offset);
      ds.motif_ids.push_back(motif_id);
    }
  }
  return ds;
}

}  // namespace kseg
