/*
 * Copyright 2026 The tabbin Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "tabbin/encoder.hpp"
#include "tabbin/gradcheck.hpp"

namespace tabbin {
namespace {

using Mat = Matrix<double>;

Mat random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double sd = 1.0) {
  Mat m(r, c);
  fill_normal(m, rng, sd);
  return m;
}

BinaryMatrix random_mask(int n, Rng& rng, double p_visible) {
  BinaryMatrix m(n, 0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) m(i, j) = i == j || rng.bernoulli(p_visible);
  }
  return m;
}

// Softmax over visible indices only, written out element by element.
Mat brute_attention(const Mat& q, const Mat& k, const Mat& v, const BinaryMatrix& m) {
  const auto n = q.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Mat out = Mat::Zero(n, v.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> logits(n, 0.0);
    double mx = -INFINITY;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!m(i, j)) continue;
      double s = 0;
      for (Eigen::Index d = 0; d < q.cols(); ++d) s += q(i, d) * k(j, d);
      logits[j] = s * scale;
      mx = std::max(mx, logits[j]);
    }
    double z = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (m(i, j)) z += std::exp(logits[j] - mx);
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      if (m(i, j)) out.row(i) += std::exp(logits[j] - mx) / z * v.row(j);
    }
  }
  return out;
}

TEST(MaskedAttention, AllOnesEqualsUnmasked) {
  Rng rng(1);
  for (int n : {1, 3, 8, 17}) {
    const Mat q = random_matrix(n, 6, rng), k = random_matrix(n, 6, rng), v = random_matrix(n, 6, rng);
    const BinaryMatrix ones = BinaryMatrix::ones(n);
    for (MaskMode mode : {MaskMode::kAdditive, MaskMode::kMultiplicativeRenorm}) {
      const auto r = masked_attention(q, k, v, ones, mode);
      EXPECT_LT((r.out - brute_attention(q, k, v, ones)).cwiseAbs().maxCoeff(), 1e-6);
    }
  }
}

TEST(MaskedAttention, IdentityReturnsValues) {
  Rng rng(2);
  const Mat q = random_matrix(5, 4, rng), k = random_matrix(5, 4, rng), v = random_matrix(5, 4, rng);
  for (MaskMode mode : {MaskMode::kAdditive, MaskMode::kMultiplicativeRenorm}) {
    EXPECT_EQ(masked_attention(q, k, v, BinaryMatrix::identity(5), mode).out, v);
  }
}

TEST(MaskedAttention, SingleZeroMatchesBruteForce) {
  Rng rng(3);
  const Mat q = random_matrix(3, 4, rng), k = random_matrix(3, 4, rng), v = random_matrix(3, 4, rng);
  BinaryMatrix m = BinaryMatrix::ones(3);
  m(0, 2) = 0;
  for (MaskMode mode : {MaskMode::kAdditive, MaskMode::kMultiplicativeRenorm}) {
    const auto r = masked_attention(q, k, v, m, mode);
    EXPECT_LT((r.out - brute_attention(q, k, v, m)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(r.probs(0, 2), 0.0);
  }
}

TEST(MaskedAttention, RowsAreDistributionsOverVisible) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(20));
    const Mat q = random_matrix(n, 8, rng, 3.0), k = random_matrix(n, 8, rng, 3.0), v = random_matrix(n, 8, rng);
    const BinaryMatrix m = random_mask(n, rng, 0.4);
    for (MaskMode mode : {MaskMode::kAdditive, MaskMode::kMultiplicativeRenorm}) {
      const auto r = masked_attention(q, k, v, m, mode);
      for (int i = 0; i < n; ++i) {
        EXPECT_NEAR(r.probs.row(i).sum(), 1.0, 1e-9);
        for (int j = 0; j < n; ++j) {
          EXPECT_GE(r.probs(i, j), 0.0);
          if (!m(i, j)) EXPECT_EQ(r.probs(i, j), 0.0);
        }
      }
      EXPECT_LT((r.out - brute_attention(q, k, v, m)).cwiseAbs().maxCoeff(), 1e-9);
    }
  }
}

TEST(MaskedAttention, MoreMaskingZeroesNewPositions) {
  Rng rng(5);
  const int n = 9;
  const Mat q = random_matrix(n, 4, rng), k = random_matrix(n, 4, rng), v = random_matrix(n, 4, rng);
  const BinaryMatrix m = random_mask(n, rng, 0.7);
  BinaryMatrix tighter = m;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i != j && rng.bernoulli(0.5)) tighter(i, j) = 0;
    }
  }
  const auto r = masked_attention(q, k, v, tighter);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (m(i, j) && !tighter(i, j)) EXPECT_EQ(r.probs(i, j), 0.0);
    }
  }
}

TEST(MaskedAttention, MaskedScoresGetZeroGradient) {
  Rng rng(6);
  const int n = 7;
  const Mat q = random_matrix(n, 4, rng), k = random_matrix(n, 4, rng), v = random_matrix(n, 4, rng);
  const BinaryMatrix m = random_mask(n, rng, 0.5);
  const Mat d_out = random_matrix(n, 4, rng);
  for (MaskMode mode : {MaskMode::kAdditive, MaskMode::kMultiplicativeRenorm}) {
    const auto fwd = masked_attention(q, k, v, m, mode);
    const auto g = masked_attention_backward(q, k, v, m, fwd, d_out, mode);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (!m(i, j)) EXPECT_EQ(g.dscores(i, j), 0.0);
      }
    }
  }
}

TEST(MaskedAttention, ShapeMismatchThrows) {
  Rng rng(7);
  const Mat q = random_matrix(3, 4, rng), k = random_matrix(3, 5, rng), v = random_matrix(3, 4, rng);
  EXPECT_THROW(masked_attention(q, k, v, BinaryMatrix::ones(3)), ShapeError);
  EXPECT_THROW(masked_attention(q, q, v, BinaryMatrix::ones(4)), ShapeError);
}

TEST(MaskedAttention, GradientWrtQueriesAtThreeTokens) {
  Rng rng(8);
  TensorParams q{random_matrix(3, 4, rng)};
  const Mat k = random_matrix(3, 4, rng), v = random_matrix(3, 4, rng), c = random_matrix(3, 4, rng);
  BinaryMatrix m = BinaryMatrix::ones(3);
  m(1, 0) = 0;
  for (MaskMode mode : {MaskMode::kAdditive, MaskMode::kMultiplicativeRenorm}) {
    auto loss = [&] { return masked_attention(q.value, k, v, m, mode).out.cwiseProduct(c).sum(); };
    const auto fwd = masked_attention(q.value, k, v, m, mode);
    TensorParams g{masked_attention_backward(q.value, k, v, m, fwd, c, mode).dq};
    GradCheckOptions opt;
    opt.eps = 1e-5;
    opt.fourth_order = false;
    EXPECT_LT(grad_check(q, g, loss, opt).max_rel_error, 1e-6);
  }
}

TEST(GradCheck, QuadraticIsExact) {
  Rng rng(9);
  TensorParams w{Mat(15, 15)};
  for (Eigen::Index i = 0; i < w.value.size(); ++i) {
    w.value.data()[i] = (rng.bernoulli(0.5) ? 1.0 : -1.0) * (0.5 + rng.uniform());
  }
  TensorParams g{w.value};
  const Mat before = w.value;
  auto loss = [&] { return 0.5 * w.value.squaredNorm(); };
  GradCheckOptions opt;
  opt.eps = 1e-3;
  opt.fourth_order = false;
  opt.samples_per_tensor = 1000;
  const auto res = grad_check(w, g, loss, opt);
  EXPECT_LT(res.max_rel_error, 1e-8);
  EXPECT_EQ(res.coords_checked, 225u);
  EXPECT_EQ(w.value, before);
}

TEST(LayerNorm, NormalizesRows) {
  Rng rng(10);
  const Mat x = random_matrix(5, 12, rng, 4.0);
  const Mat y = layer_norm<double>(x, Mat::Ones(1, 12), Mat::Zero(1, 12));
  for (int i = 0; i < 5; ++i) {
    EXPECT_NEAR(y.row(i).mean(), 0.0, 1e-12);
    EXPECT_NEAR(y.row(i).squaredNorm() / 12, 1.0, 1e-5);
  }
}

// Reference encoder: no mask, straightforward loops.
Mat ref_layer_norm(const Mat& x, const Mat& g, const Mat& b) {
  Mat y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    double var = 0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= static_cast<double>(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) y(i, j) = (x(i, j) - mean) / std::sqrt(var + 1e-5) * g(0, j) + b(0, j);
  }
  return y;
}

Mat ref_encoder(const Mat& in, const EncoderWeights<double>& w, const EncoderConfig& cfg) {
  const auto n = in.rows();
  const int d = cfg.hidden / cfg.heads;
  const BinaryMatrix all = BinaryMatrix::ones(static_cast<int>(n));
  Mat x = ref_layer_norm(in, w.in_ln_g, w.in_ln_b);
  for (const auto& l : w.layers) {
    const Mat q = (x * l.wq).rowwise() + l.bq.row(0), k = (x * l.wk).rowwise() + l.bk.row(0),
              v = (x * l.wv).rowwise() + l.bv.row(0);
    Mat ctx(n, cfg.hidden);
    for (int h = 0; h < cfg.heads; ++h) {
      ctx.middleCols(h * d, d) =
          brute_attention(q.middleCols(h * d, d), k.middleCols(h * d, d), v.middleCols(h * d, d), all);
    }
    const Mat a = (ctx * l.wo).rowwise() + l.bo.row(0);
    const Mat x1 = ref_layer_norm(x + a, l.ln1_g, l.ln1_b);
    Mat hid = (x1 * l.w1).rowwise() + l.b1.row(0);
    for (Eigen::Index i = 0; i < hid.size(); ++i) {
      const double z = hid.data()[i];
      hid.data()[i] = 0.5 * z * (1.0 + std::erf(z / std::sqrt(2.0)));
    }
    const Mat f = (hid * l.w2).rowwise() + l.b2.row(0);
    x = ref_layer_norm(x1 + f, l.ln2_g, l.ln2_b);
  }
  return x;
}

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.hidden = 12;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.dropout = 0.0;
  return cfg;
}

EncoderWeights<double> random_encoder(const EncoderConfig& cfg, Rng& rng) {
  EncoderWeights<double> w(cfg, 10);
  w.visit([&](const std::string&, Mat& m) { fill_normal(m, rng, 0.3); });
  return w;
}

TEST(EncoderForward, AllOnesMatchesReference) {
  Rng rng(11);
  const auto cfg = tiny_config();
  const auto w = random_encoder(cfg, rng);
  const Mat in = random_matrix(9, 12, rng);
  const Mat out = encoder_forward(in, BinaryMatrix::ones(9), w, cfg);
  EXPECT_LT((out - ref_encoder(in, w, cfg)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(EncoderForward, ZeroWeightsCollapseToLayerNorms) {
  auto cfg = tiny_config();
  cfg.layers = 1;
  const EncoderWeights<double> w(cfg, 10);
  Rng rng(12);
  const Mat in = random_matrix(4, 12, rng, 3.0);
  const Mat g = Mat::Ones(1, 12), b = Mat::Zero(1, 12);
  Rng mrng(13);
  const Mat out = encoder_forward(in, random_mask(4, mrng, 0.5), w, cfg);
  const Mat once = ref_layer_norm(in, g, b);
  const Mat expected = ref_layer_norm(ref_layer_norm(once, g, b), g, b);
  EXPECT_LT((out - expected).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((out - ref_layer_norm(once, g, b)).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(EncoderForward, PermutationEquivariant) {
  Rng rng(14);
  const auto cfg = tiny_config();
  const auto w = random_encoder(cfg, rng);
  const int n = 10;
  const Mat in = random_matrix(n, 12, rng);
  const BinaryMatrix m = random_mask(n, rng, 0.5);
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  Mat pin(n, 12);
  BinaryMatrix pm(n, 0);
  for (int i = 0; i < n; ++i) {
    pin.row(i) = in.row(perm[i]);
    for (int j = 0; j < n; ++j) pm(i, j) = m(perm[i], perm[j]);
  }
  const Mat out = encoder_forward(in, m, w, cfg);
  const Mat pout = encoder_forward(pin, pm, w, cfg);
  for (int i = 0; i < n; ++i) EXPECT_LT((pout.row(i) - out.row(perm[i])).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(EncoderForward, DeterministicWithSeededDropout) {
  auto cfg = tiny_config();
  cfg.dropout = 0.2;
  Rng wrng(15);
  const auto w = random_encoder(cfg, wrng);
  const Mat in = random_matrix(6, 12, wrng);
  Rng a(99), b(99), c(100);
  const Mat x = encoder_forward(in, BinaryMatrix::ones(6), w, cfg, &a);
  EXPECT_EQ(x, encoder_forward(in, BinaryMatrix::ones(6), w, cfg, &b));
  EXPECT_NE(x, encoder_forward(in, BinaryMatrix::ones(6), w, cfg, &c));
  // inference ignores dropout
  EXPECT_EQ(encoder_forward(in, BinaryMatrix::ones(6), w, cfg),
            encoder_forward(in, BinaryMatrix::ones(6), w, cfg));
}

TEST(EncoderForward, RejectsBadInput) {
  const auto cfg = tiny_config();
  const EncoderWeights<double> w(cfg, 10);
  EXPECT_THROW(encoder_forward<double>(Mat::Zero(3, 12), BinaryMatrix::ones(4), w, cfg), ShapeError);
  EXPECT_THROW(encoder_forward<double>(Mat::Zero(3, 24), BinaryMatrix::ones(3), w, cfg), ShapeError);
  Mat bad = Mat::Zero(3, 12);
  bad(1, 1) = NAN;
  EXPECT_THROW(encoder_forward(bad, BinaryMatrix::ones(3), w, cfg), NonFiniteError);
}

TEST(EncoderBackward, MatchesFiniteDifferences) {
  for (MaskMode mode : {MaskMode::kAdditive, MaskMode::kMultiplicativeRenorm}) {
    Rng rng(16);
    auto cfg = tiny_config();
    cfg.mask_mode = mode;
    auto w = random_encoder(cfg, rng);
    const Mat in = random_matrix(6, 12, rng);
    const BinaryMatrix m = random_mask(6, rng, 0.5);
    const Mat c = random_matrix(6, 12, rng);
    EncoderCache<double> cache;
    encoder_forward(in, m, w, cfg, nullptr, &cache);
    EncoderWeights<double> g(cfg, 10);
    g.visit([](const std::string&, Mat& x) { x.setZero(); });
    encoder_backward(c, w, cfg, cache, g);
    auto loss = [&] { return encoder_forward(in, m, w, cfg).cwiseProduct(c).sum(); };
    const auto res = grad_check(w, g, loss);
    EXPECT_LT(res.max_rel_error, 1e-4) << to_string(mode) << " " << res.worst_tensor;
  }
}

TEST(EncoderConfig, ValidatesAndRoundTrips) {
  EncoderConfig c;
  c.heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.mask_mode = MaskMode::kMultiplicativeRenorm;
  EXPECT_EQ(encoder_config_from_json(to_json(c)), c);
  EXPECT_THROW(mask_mode_from_string("multiply"), ConfigError);
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

}  // namespace
}  // namespace tabbin
