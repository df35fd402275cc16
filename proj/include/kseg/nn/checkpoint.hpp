#pragma once

// Model checkpoint, binary framing from binio.hpp with magic "KSEGCNN1":
//
//   version u32 (= 1)
//   shape: vocab, embed_dim, kernel, channels, conv_layers, num_classes, seq_len (i32 each)
//   tensor count u32, then per tensor:
//     name (u32 length + bytes), rows u32, cols u32, rows*cols f64 (row-major)
//   crc32 u32
//
// Tensor order: embedding, conv{l}.weight, conv{l}.bias ..., dense.weight, dense.bias.
// Biases are stored as (n x 1).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kseg/binio.hpp"
#include "kseg/nn/model.hpp"

namespace kseg::nn {

inline constexpr std::string_view kCheckpointMagic = "KSEGCNN1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename M>
void write_tensor(BinaryWriter& w, const std::string& name, const M& m) {
  w.str(name);
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) w.f64(m.data()[i]);
}

template <typename M>
void read_tensor(BinaryReader& r, const std::string& name, M& m) {
  const std::string got = r.str();
  if (got != name) throw FormatError("expected tensor " + name + ", found " + got);
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  if (rows != m.rows() || cols != m.cols())
    throw FormatError("tensor " + name + " has shape " + std::to_string(rows) + "x" +
                      std::to_string(cols) + ", expected " + std::to_string(m.rows()) + "x" +
                      std::to_string(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f64();
}

}  // namespace detail

inline std::vector<std::uint8_t> save_checkpoint(const CnnModel& model) {
  BinaryWriter w(kCheckpointMagic, kCheckpointVersion);
  const ModelShape& s = model.shape;
  for (int v : {s.vocab, s.embed_dim, s.kernel, s.channels, s.conv_layers, s.num_classes, s.seq_len})
    w.i32(v);
  w.u32(static_cast<std::uint32_t>(3 + 2 * model.convs.size()));
  detail::write_tensor(w, "embedding", model.embedding);
  for (std::size_t l = 0; l < model.convs.size(); ++l) {
    detail::write_tensor(w, "conv" + std::to_string(l) + ".weight", model.convs[l].weight);
    detail::write_tensor(w, "conv" + std::to_string(l) + ".bias", model.convs[l].bias);
  }
  detail::write_tensor(w, "dense.weight", model.dense_w);
  detail::write_tensor(w, "dense.bias", model.dense_b);
  return std::move(w).finish();
}

inline CnnModel load_checkpoint(std::span<const std::uint8_t> bytes) {
  BinaryReader r(bytes, kCheckpointMagic, kCheckpointVersion);
  ModelShape s;
  s.vocab = r.i32();
  s.embed_dim = r.i32();
  s.kernel = r.i32();
  s.channels = r.i32();
  s.conv_layers = r.i32();
  s.num_classes = r.i32();
  s.seq_len = r.i32();
  validate(s);
  // Guard the allocation below against nonsense dimensions.
  const double params = double(s.vocab) * s.embed_dim +
                        double(s.conv_layers) * s.kernel * std::max(s.embed_dim, s.channels) * s.channels +
                        double(s.channels) * s.num_classes;
  if (params * 8 > double(bytes.size())) throw FormatError("shape inconsistent with file size");
  CnnModel m = CnnModel::zeros(s);
  const std::uint32_t tensors = r.u32();
  if (tensors != 3 + 2 * m.convs.size()) throw FormatError("unexpected tensor count");
  detail::read_tensor(r, "embedding", m.embedding);
  for (std::size_t l = 0; l < m.convs.size(); ++l) {
    detail::read_tensor(r, "conv" + std::to_string(l) + ".weight", m.convs[l].weight);
    detail::read_tensor(r, "conv" + std::to_string(l) + ".bias", m.convs[l].bias);
  }
  detail::read_tensor(r, "dense.weight", m.dense_w);
  detail::read_tensor(r, "dense.bias", m.dense_b);
  r.expect_end();
  return m;
}

}  // namespace kseg::nn
