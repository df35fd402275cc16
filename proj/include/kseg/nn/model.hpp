#pragma once

// 1D convolutional classifier over signed-length token sequences:
// embedding -> N x (same-padded conv, ReLU) -> mean pool over non-pad
// positions -> dense. Forward and backward passes are written out by hand.
//
// Convolutions run as im2col products. All valid positions of a batch are
// stacked into one matrix; row p of sample s only sees rows of the same
// sample, and pad positions are never materialised (they are identically
// zero after masking).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "kseg/error.hpp"
#include "kseg/rng.hpp"
#include "kseg/traffic.hpp"

namespace kseg::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr int kPadId = 0;
inline constexpr int kVocabSize = 2 * kMaxPacketLength + 2;  // PAD + [-1500, 1500]

inline int token_id(int feature_value) {
  return std::clamp(feature_value, -kMaxPacketLength, kMaxPacketLength) + kMaxPacketLength + 1;
}

struct TokenSequence {
  std::vector<int> ids;
  std::size_t valid_len = 0;

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

inline TokenSequence encode_features(std::span<const std::int16_t> features, std::size_t n) {
  if (n == 0) throw ConfigError("sequence length must be >= 1");
  TokenSequence seq;
  seq.ids.assign(n, kPadId);
  seq.valid_len = std::min(n, features.size());
  for (std::size_t i = 0; i < seq.valid_len; ++i) seq.ids[i] = token_id(features[i]);
  return seq;
}

inline TokenSequence encode_sequence(const BidiFlow& flow, std::size_t n) {
  const auto f = flow.features(n);
  return encode_features(f, n);
}

struct ModelShape {
  int vocab = kVocabSize;
  int embed_dim = 128;
  int kernel = 3;
  int channels = 128;
  int conv_layers = 2;
  int num_classes = 2;
  int seq_len = 32;

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

inline void validate(const ModelShape& s) {
  if (s.vocab < 2 || s.embed_dim < 1 || s.channels < 1 || s.conv_layers < 1 ||
      s.num_classes < 1 || s.seq_len < 1)
    throw ConfigError("model dimensions must be positive");
  if (s.kernel < 1 || s.kernel % 2 == 0) throw ConfigError("kernel size must be odd");
}

struct ConvLayer {
  Matrix weight;  // (kernel * in_channels) x out_channels; row k*in + i
  Vector bias;    // out_channels

  friend bool operator==(const ConvLayer& a, const ConvLayer& b) {
    return a.weight == b.weight && a.bias == b.bias;
  }
};

struct CnnModel {
  ModelShape shape;
  Matrix embedding;  // vocab x embed_dim; row kPadId is never read
  std::vector<ConvLayer> convs;
  Matrix dense_w;  // channels x num_classes
  Vector dense_b;  // num_classes

  static CnnModel zeros(const ModelShape& shape) {
    validate(shape);
    CnnModel m;
    m.shape = shape;
    m.embedding = Matrix::Zero(shape.vocab, shape.embed_dim);
    int in = shape.embed_dim;
    for (int l = 0; l < shape.conv_layers; ++l) {
      m.convs.push_back({Matrix::Zero(shape.kernel * in, shape.channels), Vector::Zero(shape.channels)});
      in = shape.channels;
    }
    m.dense_w = Matrix::Zero(shape.channels, shape.num_classes);
    m.dense_b = Vector::Zero(shape.num_classes);
    return m;
  }

  // Glorot-uniform weights, zero biases.
  static CnnModel initialized(const ModelShape& shape, std::uint64_t seed) {
    CnnModel m = zeros(shape);
    Rng rng(seed);
    auto fill = [&rng](Matrix& w, double fan_in, double fan_out) {
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform_real(-limit, limit);
    };
    fill(m.embedding, shape.vocab, shape.embed_dim);
    m.embedding.row(kPadId).setZero();
    int in = shape.embed_dim;
    for (auto& c : m.convs) {
      fill(c.weight, double(shape.kernel) * in, double(shape.kernel) * shape.channels);
      in = shape.channels;
    }
    fill(m.dense_w, shape.channels, shape.num_classes);
    return m;
  }

  // Every parameter tensor as a flat span, in a fixed order.
  std::vector<std::span<double>> parameters() {
    std::vector<std::span<double>> out;
    out.emplace_back(embedding.data(), embedding.size());
    for (auto& c : convs) {
      out.emplace_back(c.weight.data(), c.weight.size());
      out.emplace_back(c.bias.data(), c.bias.size());
    }
    out.emplace_back(dense_w.data(), dense_w.size());
    out.emplace_back(dense_b.data(), dense_b.size());
    return out;
  }
  std::vector<std::span<const double>> parameters() const {
    std::vector<std::span<const double>> out;
    for (auto s : const_cast<CnnModel*>(this)->parameters()) out.emplace_back(s.data(), s.size());
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto s : parameters()) n += s.size();
    return n;
  }

  friend bool operator==(const CnnModel& a, const CnnModel& b) {
    return a.shape == b.shape && a.embedding == b.embedding && a.convs == b.convs &&
           a.dense_w == b.dense_w && a.dense_b == b.dense_b;
  }
};

// Everything the backward pass and Grad-CAM need, for one or more inputs.
struct ForwardCache {
  std::vector<TokenSequence> inputs;
  std::vector<Eigen::Index> row_offset;  // samples + 1 entries
  std::vector<Matrix> im2col;            // per conv layer
  std::vector<Matrix> pre;               // per conv layer, pre-activation
  std::vector<Matrix> post;              // per conv layer, post-ReLU
  Matrix pooled;                         // samples x channels
  Matrix logits;                         // samples x classes

  std::size_t samples() const { return inputs.size(); }

  Vector logits_of(std::size_t sample = 0) const { return logits.row(sample).transpose(); }

  // Last-conv feature maps of one sample, seq_len x channels, zero rows at pads.
  Matrix feature_maps(std::size_t sample = 0) const {
    const auto& a = post.back();
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(inputs[sample].ids.size()), a.cols());
    const Eigen::Index begin = row_offset[sample];
    const Eigen::Index rows = row_offset[sample + 1] - begin;
    out.topRows(rows) = a.middleRows(begin, rows);
    return out;
  }
};

namespace detail {

inline Matrix im2col(const Matrix& x, std::span<const Eigen::Index> row_offset, int kernel) {
  const Eigen::Index in = x.cols();
  Matrix u = Matrix::Zero(x.rows(), kernel * in);
  const int half = kernel / 2;
  for (std::size_t s = 0; s + 1 < row_offset.size(); ++s) {
    const Eigen::Index a = row_offset[s], b = row_offset[s + 1];
    for (Eigen::Index p = a; p < b; ++p) {
      for (int k = 0; k < kernel; ++k) {
        const Eigen::Index q = p + k - half;
        if (q < a || q >= b) continue;
        u.block(p, k * in, 1, in) = x.row(q);
      }
    }
  }
  return u;
}

inline Matrix col2im(const Matrix& du, std::span<const Eigen::Index> row_offset, int kernel,
                     Eigen::Index in) {
  Matrix dx = Matrix::Zero(du.rows(), in);
  const int half = kernel / 2;
  for (std::size_t s = 0; s + 1 < row_offset.size(); ++s) {
    const Eigen::Index a = row_offset[s], b = row_offset[s + 1];
    for (Eigen::Index p = a; p < b; ++p) {
      for (int k = 0; k < kernel; ++k) {
        const Eigen::Index q = p + k - half;
        if (q < a || q >= b) continue;
        dx.row(q) += du.block(p, k * in, 1, in);
      }
    }
  }
  return dx;
}

}  // namespace detail

inline ForwardCache forward_batch(const CnnModel& model, std::span<const TokenSequence> inputs) {
  const ModelShape& s = model.shape;
  ForwardCache cache;
  cache.inputs.assign(inputs.begin(), inputs.end());
  cache.row_offset.push_back(0);
  for (const auto& seq : inputs) {
    if (seq.valid_len > seq.ids.size()) throw InternalError("valid_len exceeds sequence length");
    cache.row_offset.push_back(cache.row_offset.back() + static_cast<Eigen::Index>(seq.valid_len));
  }
  const Eigen::Index rows = cache.row_offset.back();

  Matrix x(rows, s.embed_dim);
  Eigen::Index r = 0;
  for (const auto& seq : inputs) {
    for (std::size_t p = 0; p < seq.valid_len; ++p, ++r) {
      const int id = seq.ids[p];
      if (id <= kPadId || id >= s.vocab) throw InternalError("token id out of vocabulary");
      x.row(r) = model.embedding.row(id);
    }
  }

  for (const auto& conv : model.convs) {
    Matrix u = detail::im2col(x, cache.row_offset, s.kernel);
    Matrix z = u * conv.weight;
    z.rowwise() += conv.bias.transpose();
    Matrix a = z.cwiseMax(0.0);
    cache.im2col.push_back(std::move(u));
    cache.pre.push_back(std::move(z));
    x = a;
    cache.post.push_back(std::move(a));
  }

  const auto n = static_cast<Eigen::Index>(inputs.size());
  cache.pooled = Matrix::Zero(n, s.channels);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index a = cache.row_offset[i], b = cache.row_offset[i + 1];
    if (b > a) cache.pooled.row(i) = x.middleRows(a, b - a).colwise().sum() / double(b - a);
  }
  cache.logits = cache.pooled * model.dense_w;
  cache.logits.rowwise() += model.dense_b.transpose();
  return cache;
}

inline ForwardCache forward(const CnnModel& model, const TokenSequence& seq) {
  return forward_batch(model, std::span<const TokenSequence>(&seq, 1));
}

inline Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

inline double cross_entropy(const Vector& logits, int target) {
  const double m = logits.maxCoeff();
  return m + std::log((logits.array() - m).exp().sum()) - logits[target];
}

struct Gradients {
  CnnModel params;      // same shapes as the model
  Matrix feature_maps;  // d/dA of the last conv layer, stacked rows like the cache
};

// d(objective)/d(last feature maps) given d(objective)/d(logits) per sample.
inline Matrix feature_map_gradient(const CnnModel& model, const ForwardCache& cache,
                                   const Matrix& dlogits) {
  const Matrix dpooled = dlogits * model.dense_w.transpose();
  Matrix da = Matrix::Zero(cache.row_offset.back(), model.shape.channels);
  for (std::size_t i = 0; i < cache.samples(); ++i) {
    const Eigen::Index a = cache.row_offset[i], b = cache.row_offset[i + 1];
    if (b == a) continue;
    da.middleRows(a, b - a).rowwise() = dpooled.row(static_cast<Eigen::Index>(i)) / double(b - a);
  }
  return da;
}

// Backpropagates an arbitrary logit gradient (one row per cached sample).
inline Gradients backward_from_logits(const CnnModel& model, const ForwardCache& cache,
                                      const Matrix& dlogits) {
  const ModelShape& s = model.shape;
  Gradients g{CnnModel::zeros(s), Matrix()};
  g.params.dense_w = cache.pooled.transpose() * dlogits;
  g.params.dense_b = dlogits.colwise().sum().transpose();
  Matrix da = feature_map_gradient(model, cache, dlogits);
  g.feature_maps = da;
  for (int l = s.conv_layers - 1; l >= 0; --l) {
    const auto ul = static_cast<std::size_t>(l);
    Matrix dz = (cache.pre[ul].array() > 0.0).select(da, 0.0);
    g.params.convs[ul].weight = cache.im2col[ul].transpose() * dz;
    g.params.convs[ul].bias = dz.colwise().sum().transpose();
    const Matrix du = dz * model.convs[ul].weight.transpose();
    const Eigen::Index in = l == 0 ? s.embed_dim : s.channels;
    da = detail::col2im(du, cache.row_offset, s.kernel, in);
  }
  Eigen::Index r = 0;
  for (const auto& seq : cache.inputs)
    for (std::size_t p = 0; p < seq.valid_len; ++p, ++r) g.params.embedding.row(seq.ids[p]) += da.row(r);
  return g;
}

// Gradient of the cross-entropy loss of a single cached input.
inline Gradients backward(const CnnModel& model, const ForwardCache& cache, int target_class) {
  if (cache.samples() != 1) throw InternalError("backward expects a single-sample cache");
  if (target_class < 0 || target_class >= model.shape.num_classes)
    throw ConfigError("target class out of range");
  Matrix dlogits = softmax(cache.logits_of(0)).transpose();
  dlogits(0, target_class) -= 1.0;
  return backward_from_logits(model, cache, dlogits);
}

}  // namespace kseg::nn
