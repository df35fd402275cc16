#include <gtest/gtest.h>

#include <cmath>

#include "kseg/kseg.hpp"
#include "support.hpp"

using namespace kseg;
using namespace kseg::nn;
using kseg::testing::near_kink;
using kseg::testing::random_tiny;

namespace {

// Scalar loops straight from the layer definitions.
std::vector<double> naive_logits(const CnnModel& m, const TokenSequence& seq) {
  const auto& s = m.shape;
  const int n = static_cast<int>(seq.valid_len);
  std::vector<std::vector<double>> x(static_cast<std::size_t>(n), std::vector<double>(s.embed_dim));
  for (int p = 0; p < n; ++p)
    for (int e = 0; e < s.embed_dim; ++e) x[p][e] = m.embedding(seq.ids[p], e);
  int in = s.embed_dim;
  for (const auto& conv : m.convs) {
    std::vector<std::vector<double>> y(static_cast<std::size_t>(n), std::vector<double>(s.channels));
    for (int p = 0; p < n; ++p)
      for (int o = 0; o < s.channels; ++o) {
        double z = conv.bias[o];
        for (int k = 0; k < s.kernel; ++k) {
          const int q = p + k - s.kernel / 2;
          if (q < 0 || q >= n) continue;
          for (int i = 0; i < in; ++i) z += x[q][i] * conv.weight(k * in + i, o);
        }
        y[p][o] = z > 0 ? z : 0;
      }
    x = y;
    in = s.channels;
  }
  std::vector<double> logits(static_cast<std::size_t>(s.num_classes));
  for (int c = 0; c < s.num_classes; ++c) {
    double z = m.dense_b[c];
    for (int o = 0; o < s.channels; ++o) {
      double pool = 0;
      for (int p = 0; p < n; ++p) pool += x[p][o];
      if (n) pool /= n;
      z += pool * m.dense_w(o, c);
    }
    logits[c] = z;
  }
  return logits;
}

}  // namespace

TEST(Tokens, Mapping) {
  EXPECT_EQ(token_id(512), 2013);
  EXPECT_EQ(token_id(-1500), 1);
  EXPECT_EQ(token_id(1500), kVocabSize - 1);
  BidiFlow f;
  f.packets = {{0, SignedFeature::from_value(100)}, {1, SignedFeature::from_value(-3)}};
  const auto seq = encode_sequence(f, 32);
  EXPECT_EQ(seq.valid_len, 2u);
  for (std::size_t p = 2; p < 32; ++p) EXPECT_EQ(seq.ids[p], kPadId);
}

TEST(Forward, HandComputedTinyModel) {
  ModelShape s{5, 2, 3, 2, 1, 2, 4};
  CnnModel m = CnnModel::zeros(s);
  m.embedding.row(1) << 1, 0;
  m.embedding.row(2) << 0, 1;
  m.embedding.row(3) << 1, 1;
  m.embedding.row(4) << -1, 2;
  // Row k*in + i: centre tap copies, left tap feeds x[0] into channel 1 at 0.5.
  m.convs[0].weight(1 * 2 + 0, 0) = 1;
  m.convs[0].weight(1 * 2 + 1, 1) = 1;
  m.convs[0].weight(0 * 2 + 0, 1) = 0.5;
  m.convs[0].bias << 0, -1;
  m.dense_w << 1, -1, 2, 0;
  m.dense_b << 0.1, 0.2;
  TokenSequence seq{{1, 2, 3, kPadId}, 3};
  // Channel 0: [1, 0, 1] -> mean 2/3. Channel 1: relu([-1, 0.5, 0]) -> mean 1/6.
  const auto cache = forward(m, seq);
  EXPECT_NEAR(cache.logits(0, 0), 2.0 / 3 + 2.0 / 6 + 0.1, 1e-12);
  EXPECT_NEAR(cache.logits(0, 1), -2.0 / 3 + 0.2, 1e-12);
}

TEST(Forward, MatchesScalarReference) {
  Rng rng(17);
  for (int t = 0; t < 50; ++t) {
    auto c = random_tiny(rng);
    const auto cache = forward(c.model, c.seq);
    const auto ref = naive_logits(c.model, c.seq);
    for (int k = 0; k < c.model.shape.num_classes; ++k) EXPECT_NEAR(cache.logits(0, k), ref[k], 1e-12);
  }
}

TEST(Forward, BatchEqualsSingles) {
  Rng rng(2);
  ModelShape s{20, 4, 3, 5, 2, 3, 8};
  const CnnModel m = CnnModel::initialized(s, 3);
  std::vector<TokenSequence> seqs;
  for (int i = 0; i < 6; ++i) {
    TokenSequence q;
    q.ids.assign(8, kPadId);
    q.valid_len = static_cast<std::size_t>(rng.uniform_int(0, 8));
    for (std::size_t p = 0; p < q.valid_len; ++p) q.ids[p] = static_cast<int>(rng.uniform_int(1, 19));
    seqs.push_back(q);
  }
  const auto batch = forward_batch(m, seqs);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto one = forward(m, seqs[i]);
    EXPECT_TRUE(batch.logits.row(static_cast<Eigen::Index>(i)).isApprox(one.logits.row(0), 1e-12) ||
                (one.logits.row(0) - batch.logits.row(static_cast<Eigen::Index>(i))).norm() < 1e-12);
  }
}

TEST(Forward, ZeroWeightsGiveUniformSoftmax) {
  ModelShape s{30, 4, 3, 4, 2, 5, 6};
  const CnnModel m = CnnModel::zeros(s);
  const auto p = softmax(forward(m, TokenSequence{{1, 2, 3, 0, 0, 0}, 3}).logits_of(0));
  for (int k = 0; k < 5; ++k) EXPECT_NEAR(p[k], 0.2, 1e-12);
  EXPECT_NEAR(p.sum(), 1.0, 1e-9);
}

TEST(Forward, ClassPermutationEquivariance) {
  ModelShape s{30, 4, 3, 4, 2, 3, 6};
  CnnModel m = CnnModel::initialized(s, 9);
  m.dense_b << 0.3, -0.2, 0.5;
  const TokenSequence q{{5, 7, 9, 11, 0, 0}, 4};
  const auto before = forward(m, q).logits_of(0);
  CnnModel p = m;
  const int perm[3] = {2, 0, 1};
  for (int c = 0; c < 3; ++c) {
    p.dense_w.col(c) = m.dense_w.col(perm[c]);
    p.dense_b[c] = m.dense_b[perm[c]];
  }
  const auto after = forward(p, q).logits_of(0);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(after[c], before[perm[c]], 1e-12);
}

TEST(Backward, LogitGradientIsSoftmaxMinusOneHot) {
  ModelShape s{30, 4, 3, 4, 1, 3, 6};
  const CnnModel m = CnnModel::initialized(s, 4);
  const TokenSequence q{{5, 7, 9, 0, 0, 0}, 3};
  const auto cache = forward(m, q);
  const auto g = backward(m, cache, 1);
  Vector d = softmax(cache.logits_of(0));
  d[1] -= 1;
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(g.params.dense_b[c], d[c], 1e-12);
}

TEST(Backward, FiniteDifferencesOnRandomTinyModels) {
  Rng rng(101);
  int checked = 0;
  double worst = 0.0;
  while (checked < 25) {
    auto c = random_tiny(rng);
    if (near_kink(c.model, c.seq)) continue;
    const auto cache = forward(c.model, c.seq);
    auto g = backward(c.model, cache, c.target);
    auto analytic = g.params.parameters();
    auto loss = [&](const CnnModel& m) { return cross_entropy(forward(m, c.seq).logits_of(0), c.target); };
    for (std::size_t t = 0; t < analytic.size(); ++t)
      for (std::size_t i = 0; i < analytic[t].size(); ++i) {
        const double num = kseg::testing::central_difference(c.model, t, i, loss);
        const double rel = std::abs(analytic[t][i] - num) / (std::abs(analytic[t][i]) + 1e-8);
        worst = std::max(worst, rel);
        ASSERT_LT(rel, 1e-4) << "tensor " << t << " index " << i << " analytic " << analytic[t][i] << " numeric "
                             << num;
      }
    ++checked;
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(Backward, AllPadInputLeavesEmbeddingUntouched) {
  ModelShape s{10, 3, 3, 3, 2, 2, 4};
  const CnnModel m = CnnModel::initialized(s, 5);
  const auto cache = forward(m, TokenSequence{{0, 0, 0, 0}, 0});
  const auto g = backward(m, cache, 0);
  EXPECT_EQ(g.params.embedding.norm(), 0.0);
}

TEST(Training, SeparableMotifsLearnedAndDeterministic) {
  SynthConfig sc;
  sc.num_classes = 2;
  sc.flows_per_class = 150;
  sc.planted_motifs = make_random_motifs(2, 1, 16, 3);
  sc.motif_jitter = 16;
  sc.noise_len_range = {4, 10};
  const auto ds = generate_synthetic(sc);
  const auto split = split_dataset(ds.flows, {0.8, 0.2, 0.0}, 1);
  ModelShape s;
  s.embed_dim = 16;
  s.channels = 16;
  s.seq_len = 16;
  TrainConfig tc;
  tc.epochs = 20;
  tc.batch_size = 32;
  tc.learning_rate = 3e-3;
  tc.seed = 8;
  const auto r = train(split.train, split.validation, s, tc);
  double best = 0;
  for (const auto& e : r.history) best = std::max(best, e.val_accuracy);
  EXPECT_GE(best, 0.99);
  EXPECT_NEAR(r.history.front().train_loss, std::log(2.0), 0.25);
  tc.epochs = 2;
  const auto a = train(split.train, split.validation, s, tc);
  const auto b = train(split.train, split.validation, s, tc);
  EXPECT_EQ(a.model, b.model);
}

TEST(Training, InitialLossNearLogK) {
  SynthConfig sc;
  sc.num_classes = 5;
  sc.flows_per_class = 40;
  sc.planted_motifs = make_random_motifs(5, 1, 32, 3);
  const auto ds = generate_synthetic(sc);
  ModelShape s;
  s.num_classes = 5;
  s.embed_dim = 16;
  s.channels = 16;
  s.seq_len = 16;
  const CnnModel m = CnnModel::initialized(s, 1);
  double loss = 0;
  for (const auto& f : ds.flows)
    loss += cross_entropy(forward(m, encode_sequence(f, 16)).logits_of(0), *f.label);
  EXPECT_NEAR(loss / double(ds.flows.size()), std::log(5.0), 0.1);
}

TEST(Training, RejectsSingleClass) {
  std::vector<BidiFlow> flows(4);
  for (auto& f : flows) {
    f.label = 0;
    f.packets = {{0, SignedFeature::from_value(10)}};
  }
  EXPECT_THROW(train(flows, flows, ModelShape{}, TrainConfig{}), TrainingError);
}

TEST(Metrics, Basics) {
  const std::vector<ClassId> t{0, 1, 0, 1};
  EXPECT_EQ(accuracy(t, t), 1.0);
  EXPECT_EQ(macro_f1(t, t), 1.0);
  const std::vector<ClassId> all0{0, 0, 0, 0};
  // Class 0: tp 2, fp 2, fn 0 -> F1 2/3. Class 1: tp 0 -> F1 0.
  EXPECT_NEAR(macro_f1(t, all0), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(accuracy(t, all0), 0.5, 1e-12);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  ModelShape s{30, 4, 3, 4, 2, 3, 6};
  const CnnModel m = CnnModel::initialized(s, 12);
  auto bytes = save_checkpoint(m);
  EXPECT_EQ(load_checkpoint(bytes), m);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    auto bad = bytes;
    bad[rng.below(bad.size())] ^= static_cast<std::uint8_t>(1 + rng.below(255));
    EXPECT_THROW(load_checkpoint(bad), FormatError);
  }
  bytes.resize(bytes.size() / 2);
  EXPECT_THROW(load_checkpoint(bytes), FormatError);
}
