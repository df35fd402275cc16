#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "kseg/error.hpp"
#include "kseg/metrics.hpp"
#include "kseg/nn/model.hpp"
#include "kseg/rng.hpp"
#include "kseg/traffic.hpp"

namespace kseg::nn {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  // Stop after this many epochs without a validation improvement; 0 = never.
  int patience = 0;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double val_macro_f1 = 0.0;
};

struct TrainResult {
  CnnModel model;  // weights from the epoch with the best validation accuracy
  std::vector<EpochStats> history;
  int best_epoch = 0;
};

struct Prediction {
  ClassId label = 0;
  Vector probabilities;
};

struct Evaluation {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<ClassId> predicted;
};

inline Prediction predict(const CnnModel& model, const TokenSequence& seq) {
  const ForwardCache cache = forward(model, seq);
  Prediction p;
  p.probabilities = softmax(cache.logits_of(0));
  Eigen::Index best = 0;
  p.probabilities.maxCoeff(&best);
  p.label = static_cast<ClassId>(best);
  return p;
}

// Labeled flows only; unlabeled ones are ignored.
inline Evaluation evaluate(const CnnModel& model, std::span<const BidiFlow> flows,
                           std::size_t batch = 256) {
  std::vector<TokenSequence> seqs;
  std::vector<ClassId> truth;
  for (const auto& f : flows) {
    if (!f.label) continue;
    seqs.push_back(encode_sequence(f, static_cast<std::size_t>(model.shape.seq_len)));
    truth.push_back(*f.label);
  }
  Evaluation ev;
  for (std::size_t start = 0; start < seqs.size(); start += batch) {
    const std::size_t end = std::min(seqs.size(), start + batch);
    const ForwardCache cache =
        forward_batch(model, std::span<const TokenSequence>(seqs).subspan(start, end - start));
    for (Eigen::Index i = 0; i < cache.logits.rows(); ++i) {
      Eigen::Index best = 0;
      cache.logits.row(i).maxCoeff(&best);
      ev.predicted.push_back(static_cast<ClassId>(best));
    }
  }
  ev.accuracy = accuracy(truth, ev.predicted);
  ev.macro_f1 = macro_f1(truth, ev.predicted);
  return ev;
}

namespace detail {

struct Adam {
  double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;
  CnnModel m, v;

  Adam(const ModelShape& shape, double learning_rate)
      : lr(learning_rate), m(CnnModel::zeros(shape)), v(CnnModel::zeros(shape)) {}

  void apply(CnnModel& model, CnnModel& grad) {
    ++step;
    const double c1 = 1.0 - std::pow(beta1, double(step));
    const double c2 = 1.0 - std::pow(beta2, double(step));
    auto params = model.parameters();
    auto grads = grad.parameters();
    auto ms = m.parameters();
    auto vs = v.parameters();
    for (std::size_t t = 0; t < params.size(); ++t) {
      double* w = params[t].data();
      const double* g = grads[t].data();
      double* mt = ms[t].data();
      double* vt = vs[t].data();
      for (std::size_t i = 0; i < params[t].size(); ++i) {
        mt[i] = beta1 * mt[i] + (1 - beta1) * g[i];
        vt[i] = beta2 * vt[i] + (1 - beta2) * g[i] * g[i];
        w[i] -= lr * (mt[i] / c1) / (std::sqrt(vt[i] / c2) + eps);
      }
    }
  }
};

}  // namespace detail

// Mini-batch Adam on mean cross-entropy. Bit-deterministic for a fixed seed.
inline TrainResult train(std::span<const BidiFlow> train_set, std::span<const BidiFlow> val_set,
                         ModelShape shape, const TrainConfig& cfg) {
  if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.learning_rate > 0))
    throw ConfigError("epochs, batch size and learning rate must be positive");
  std::vector<TokenSequence> seqs;
  std::vector<int> labels;
  ClassId max_label = -1;
  for (const auto& f : train_set) {
    if (!f.label) continue;
    seqs.push_back(encode_sequence(f, static_cast<std::size_t>(shape.seq_len)));
    labels.push_back(*f.label);
    max_label = std::max(max_label, *f.label);
  }
  for (const auto& f : val_set)
    if (f.label) max_label = std::max(max_label, *f.label);
  std::vector<int> sorted = labels;
  std::sort(sorted.begin(), sorted.end());
  if (std::unique(sorted.begin(), sorted.end()) - sorted.begin() < 2)
    throw TrainingError("training set must contain at least two classes");
  shape.num_classes = max_label + 1;

  TrainResult result;
  CnnModel model = CnnModel::initialized(shape, derive_seed(cfg.seed, 0x696e6974));
  detail::Adam adam(shape, cfg.learning_rate);
  Rng order_rng(derive_seed(cfg.seed, 0x6f72646572));
  std::vector<std::size_t> order(seqs.size());
  double best_acc = -1.0;
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    order_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + std::size_t(cfg.batch_size));
      std::vector<TokenSequence> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(seqs[order[i]]);
      const ForwardCache cache = forward_batch(model, batch);
      Matrix dlogits(cache.logits.rows(), cache.logits.cols());
      const double scale = 1.0 / double(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const auto row = static_cast<Eigen::Index>(i - start);
        const Vector z = cache.logits_of(i - start);
        const int y = labels[order[i]];
        loss_sum += cross_entropy(z, y);
        Vector p = softmax(z);
        p[y] -= 1.0;
        dlogits.row(row) = p.transpose() * scale;
      }
      Gradients g = backward_from_logits(model, cache, dlogits);
      adam.apply(model, g.params);
    }

    EpochStats st;
    st.epoch = epoch;
    st.train_loss = seqs.empty() ? 0.0 : loss_sum / double(seqs.size());
    const Evaluation ev = evaluate(model, val_set);
    st.val_accuracy = ev.accuracy;
    st.val_macro_f1 = ev.macro_f1;
    result.history.push_back(st);
    if (st.val_accuracy > best_acc) {
      best_acc = st.val_accuracy;
      result.model = model;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

}  // namespace kseg::nn
