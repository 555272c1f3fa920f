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

// Transformer encoder with visibility-masked multi-head self-attention
// (post layer norm, GELU feed-forward) and hand-written backward passes.

#ifndef TABBIN_ENCODER_HPP_
#define TABBIN_ENCODER_HPP_

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabbin/errors.hpp"
#include "tabbin/sequence.hpp"
#include "tabbin/tensor.hpp"

namespace tabbin {

// How the visibility matrix enters attention: as an additive large negative
// logit before the softmax, or by zeroing the softmax output and
// renormalizing each row.
enum class MaskMode { kAdditive, kMultiplicativeRenorm };

inline constexpr double kMaskedLogit = -1e9;
inline constexpr double kLayerNormEps = 1e-5;

inline std::string_view to_string(MaskMode m) {
  return m == MaskMode::kAdditive ? "additive" : "multiplicative_renorm";
}

inline MaskMode mask_mode_from_string(std::string_view s) {
  if (s == "additive") return MaskMode::kAdditive;
  if (s == "multiplicative_renorm") return MaskMode::kMultiplicativeRenorm;
  throw ConfigError("unknown mask mode '" + std::string(s) + "'");
}

struct EncoderConfig {
  int hidden = 48;
  int layers = 2;
  int heads = 4;
  int ffn_mult = 4;
  double dropout = 0.1;
  int max_seq = kMaxSequenceLength;
  MaskMode mask_mode = MaskMode::kAdditive;

  void validate() const {
    if (hidden <= 0 || hidden % 12 != 0) throw ConfigError("hidden size must be a multiple of 12");
    if (heads <= 0 || hidden % heads != 0) throw ConfigError("hidden size must be divisible by heads");
    if (layers < 1) throw ConfigError("encoder needs at least one layer");
    if (ffn_mult < 1) throw ConfigError("ffn_mult must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    if (max_seq < 3) throw ConfigError("max_seq too small");
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

inline nlohmann::json to_json(const EncoderConfig& c) {
  return {{"hidden", c.hidden}, {"layers", c.layers}, {"heads", c.heads},
          {"ffn_mult", c.ffn_mult}, {"dropout", c.dropout}, {"max_seq", c.max_seq},
          {"mask_mode", std::string(to_string(c.mask_mode))}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j, EncoderConfig c = {}) {
  c.hidden = j.value("hidden", c.hidden);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
  c.dropout = j.value("dropout", c.dropout);
  c.max_seq = j.value("max_seq", c.max_seq);
  if (j.contains("mask_mode")) c.mask_mode = mask_mode_from_string(j["mask_mode"].get<std::string>());
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Masked scaled dot-product attention.

template <class T>
struct AttentionResult {
  Matrix<T> out;        // n x d
  Matrix<T> probs;      // n x n, attention weights actually applied
  Matrix<T> raw_probs;  // n x n, unmasked softmax (multiplicative mode only)
};

template <class T>
struct AttentionGrads {
  Matrix<T> dq, dk, dv;
  Matrix<T> dscores;  // gradient w.r.t. the pre-softmax scores
};

namespace detail {

template <class T>
void softmax_rows(Matrix<T>& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    auto row = s.row(i);
    const T mx = row.maxCoeff();
    // std::exp so masked logits underflow to exactly zero; Eigen's packet exp clamps
    row = row.unaryExpr([mx](T v) { return std::exp(v - mx); });
    row /= row.sum();
  }
}

template <class T>
Matrix<T> mask_bias(const BinaryMatrix& m) {
  Matrix<T> b(m.size(), m.size());
  for (int i = 0; i < m.size(); ++i) {
    for (int j = 0; j < m.size(); ++j) b(i, j) = m(i, j) ? T(0) : static_cast<T>(kMaskedLogit);
  }
  return b;
}

template <class T>
Matrix<T> mask_matrix(const BinaryMatrix& m) {
  Matrix<T> b(m.size(), m.size());
  for (int i = 0; i < m.size(); ++i) {
    for (int j = 0; j < m.size(); ++j) b(i, j) = m(i, j) ? T(1) : T(0);
  }
  return b;
}

// `mask` is the additive bias in additive mode and the 0/1 matrix otherwise.
template <class T, class DQ, class DK, class DV>
AttentionResult<T> attention_impl(const DQ& q, const DK& k, const DV& v, const Matrix<T>& mask,
                                  MaskMode mode) {
  const T scale = T(1) / std::sqrt(static_cast<T>(q.cols()));
  AttentionResult<T> r;
  Matrix<T> s = (q * k.transpose()) * scale;
  if (mode == MaskMode::kAdditive) {
    s += mask;
    softmax_rows(s);
    r.probs = std::move(s);
  } else {
    softmax_rows(s);
    r.raw_probs = s;
    r.probs = s.cwiseProduct(mask);
    for (Eigen::Index i = 0; i < r.probs.rows(); ++i) r.probs.row(i) /= r.probs.row(i).sum();
  }
  r.out = r.probs * v;
  return r;
}

template <class T, class DQ, class DK, class DV, class DO>
AttentionGrads<T> attention_backward_impl(const DQ& q, const DK& k, const DV& v,
                                          const Matrix<T>& /*mask*/, const AttentionResult<T>& fwd,
                                          const DO& d_out, MaskMode /*mode*/) {
  const T scale = T(1) / std::sqrt(static_cast<T>(q.cols()));
  AttentionGrads<T> g;
  Matrix<T> dp = d_out * v.transpose();
  g.dv = fwd.probs.transpose() * d_out;
  auto softmax_back = [](const Matrix<T>& p, const Matrix<T>& dp_) {
    Eigen::Matrix<T, Eigen::Dynamic, 1> dot = p.cwiseProduct(dp_).rowwise().sum();
    return Matrix<T>(p.cwiseProduct(dp_.colwise() - dot));
  };
  // renormalized weights equal a softmax restricted to visible scores, so both
  // modes share the same backward
  g.dscores = softmax_back(fwd.probs, dp);
  g.dq = (g.dscores * k) * scale;
  g.dk = (g.dscores.transpose() * q) * scale;
  return g;
}

}  // namespace detail

// softmax(Q K^T / sqrt(d) with invisible pairs masked) V.
template <class T>
AttentionResult<T> masked_attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                                    const BinaryMatrix& m, MaskMode mode = MaskMode::kAdditive) {
  if (q.rows() != k.rows() || k.rows() != v.rows() || q.cols() != k.cols() ||
      m.size() != q.rows()) {
    throw ShapeError("masked_attention: incompatible shapes");
  }
  const Matrix<T> mask = mode == MaskMode::kAdditive ? detail::mask_bias<T>(m) : detail::mask_matrix<T>(m);
  return detail::attention_impl<T>(q, k, v, mask, mode);
}

template <class T>
AttentionGrads<T> masked_attention_backward(const Matrix<T>& q, const Matrix<T>& k,
                                            const Matrix<T>& v, const BinaryMatrix& m,
                                            const AttentionResult<T>& fwd, const Matrix<T>& d_out,
                                            MaskMode mode = MaskMode::kAdditive) {
  const Matrix<T> mask = mode == MaskMode::kAdditive ? detail::mask_bias<T>(m) : detail::mask_matrix<T>(m);
  return detail::attention_backward_impl<T>(q, k, v, mask, fwd, d_out, mode);
}

// ---------------------------------------------------------------------------
// Layer norm and GELU.

template <class T>
struct LayerNormCache {
  Matrix<T> xhat;
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std;
};

template <class T>
Matrix<T> layer_norm(const Matrix<T>& x, const Matrix<T>& gamma, const Matrix<T>& beta,
                     LayerNormCache<T>* cache = nullptr) {
  const T h = static_cast<T>(x.cols());
  Eigen::Matrix<T, Eigen::Dynamic, 1> mean = x.rowwise().sum() / h;
  Matrix<T> centered = x.colwise() - mean;
  Eigen::Matrix<T, Eigen::Dynamic, 1> var = centered.array().square().rowwise().sum() / h;
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std =
      (var.array() + static_cast<T>(kLayerNormEps)).rsqrt();
  Matrix<T> xhat = centered.array().colwise() * inv_std.array();
  Matrix<T> y = (xhat.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <class T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const Matrix<T>& gamma,
                              const LayerNormCache<T>& c, Matrix<T>& dgamma, Matrix<T>& dbeta) {
  const T h = static_cast<T>(dy.cols());
  dgamma.row(0) += (dy.cwiseProduct(c.xhat)).colwise().sum();
  dbeta.row(0) += dy.colwise().sum();
  Matrix<T> dxhat = dy.array().rowwise() * gamma.row(0).array();
  Eigen::Matrix<T, Eigen::Dynamic, 1> mean_d = dxhat.rowwise().sum() / h;
  Eigen::Matrix<T, Eigen::Dynamic, 1> mean_dx = dxhat.cwiseProduct(c.xhat).rowwise().sum() / h;
  Matrix<T> dx = dxhat.colwise() - mean_d;
  dx.array() -= c.xhat.array().colwise() * mean_dx.array();
  return dx.array().colwise() * c.inv_std.array();
}

template <class T>
T gelu(T x) {
  return static_cast<T>(0.5) * x * (T(1) + std::erf(x * static_cast<T>(M_SQRT1_2)));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = static_cast<T>(0.5) * (T(1) + std::erf(x * static_cast<T>(M_SQRT1_2)));
  const T pdf = std::exp(static_cast<T>(-0.5) * x * x) * static_cast<T>(0.3989422804014327);
  return cdf + x * pdf;
}

// ---------------------------------------------------------------------------
// Weights.

template <class T>
struct LayerWeights {
  Matrix<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix<T> ln1_g, ln1_b;
  Matrix<T> w1, b1, w2, b2;
  Matrix<T> ln2_g, ln2_b;

  LayerWeights() = default;
  LayerWeights(int h, int f) {
    for (auto* m : {&wq, &wk, &wv, &wo}) *m = Matrix<T>::Zero(h, h);
    for (auto* m : {&bq, &bk, &bv, &bo, &ln1_b, &ln2_b, &b2}) *m = Matrix<T>::Zero(1, h);
    ln1_g = Matrix<T>::Ones(1, h);
    ln2_g = Matrix<T>::Ones(1, h);
    w1 = Matrix<T>::Zero(h, f);
    b1 = Matrix<T>::Zero(1, f);
    w2 = Matrix<T>::Zero(f, h);
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    f(prefix + "wq", wq); f(prefix + "bq", bq); f(prefix + "wk", wk); f(prefix + "bk", bk);
    f(prefix + "wv", wv); f(prefix + "bv", bv); f(prefix + "wo", wo); f(prefix + "bo", bo);
    f(prefix + "ln1_g", ln1_g); f(prefix + "ln1_b", ln1_b);
    f(prefix + "w1", w1); f(prefix + "b1", b1); f(prefix + "w2", w2); f(prefix + "b2", b2);
    f(prefix + "ln2_g", ln2_g); f(prefix + "ln2_b", ln2_b);
  }
};

// Encoder stack plus the input layer norm and the bias of the MLM output
// projection (whose matrix is the transposed token embedding).
template <class T>
struct EncoderWeights {
  Matrix<T> in_ln_g, in_ln_b;
  std::vector<LayerWeights<T>> layers;
  Matrix<T> mlm_bias;  // 1 x V

  EncoderWeights() = default;
  EncoderWeights(const EncoderConfig& cfg, int vocab) {
    cfg.validate();
    in_ln_g = Matrix<T>::Ones(1, cfg.hidden);
    in_ln_b = Matrix<T>::Zero(1, cfg.hidden);
    for (int l = 0; l < cfg.layers; ++l) layers.emplace_back(cfg.hidden, cfg.hidden * cfg.ffn_mult);
    mlm_bias = Matrix<T>::Zero(1, vocab);
  }

  template <class F>
  void visit(F&& f) {
    f("in_ln_g", in_ln_g);
    f("in_ln_b", in_ln_b);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      layers[l].visit(f, "layer" + std::to_string(l) + ".");
    }
    f("mlm_bias", mlm_bias);
  }
  template <class F>
  void visit(F&& f) const {
    const_cast<EncoderWeights*>(this)->visit(
        [&](const std::string& name, Matrix<T>& m) { f(name, static_cast<const Matrix<T>&>(m)); });
  }

  // Projection matrices normal(0, stddev); biases zero; layer norms identity.
  void init(Rng& rng, double stddev = 0.02) {
    for (auto& layer : layers) {
      for (auto* m : {&layer.wq, &layer.wk, &layer.wv, &layer.wo, &layer.w1, &layer.w2}) {
        fill_normal(*m, rng, stddev);
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Forward / backward.

template <class T>
struct LayerCache {
  Matrix<T> x;            // layer input
  Matrix<T> q, k, v;
  std::vector<AttentionResult<T>> heads;
  Matrix<T> ctx;
  Matrix<T> drop1;        // dropout scale after attention (empty when off)
  LayerNormCache<T> ln1;
  Matrix<T> x1;
  Matrix<T> h_pre, h_act;
  Matrix<T> drop2;
  LayerNormCache<T> ln2;
};

template <class T>
struct EncoderCache {
  LayerNormCache<T> in_ln;
  Matrix<T> drop0;
  Matrix<T> mask;  // additive bias or 0/1 mask depending on mode
  std::vector<LayerCache<T>> layers;
};

namespace detail {

template <class T>
Matrix<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Matrix<T> m(rows, cols);
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.bernoulli(p) ? T(0) : keep;
  return m;
}

template <class T>
Matrix<T> affine(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b) {
  Matrix<T> y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

}  // namespace detail

// Runs the stack over already-embedded tokens. Dropout is active only when
// `rng` is non-null and cfg.dropout > 0.
template <class T>
Matrix<T> encoder_forward(const Matrix<T>& embedded, const BinaryMatrix& m,
                          const EncoderWeights<T>& w, const EncoderConfig& cfg,
                          Rng* rng = nullptr, EncoderCache<T>* cache = nullptr) {
  const Eigen::Index n = embedded.rows();
  const int h = cfg.hidden;
  if (embedded.cols() != h || m.size() != n) throw ShapeError("encoder_forward: incompatible shapes");
  if (n > cfg.max_seq) throw ShapeError("sequence longer than max_seq");
  const bool drop = rng != nullptr && cfg.dropout > 0.0;
  const int heads = cfg.heads;
  const int d = h / heads;

  EncoderCache<T> local;
  EncoderCache<T>& c = cache ? *cache : local;
  c.layers.assign(w.layers.size(), {});
  c.mask = cfg.mask_mode == MaskMode::kAdditive ? detail::mask_bias<T>(m) : detail::mask_matrix<T>(m);

  Matrix<T> x = layer_norm(embedded, w.in_ln_g, w.in_ln_b, &c.in_ln);
  if (drop) {
    c.drop0 = detail::dropout_mask<T>(n, h, cfg.dropout, *rng);
    x = x.cwiseProduct(c.drop0);
  }
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const LayerWeights<T>& lw = w.layers[l];
    LayerCache<T>& lc = c.layers[l];
    lc.x = x;
    lc.q = detail::affine(x, lw.wq, lw.bq);
    lc.k = detail::affine(x, lw.wk, lw.bk);
    lc.v = detail::affine(x, lw.wv, lw.bv);
    lc.ctx.resize(n, h);
    lc.heads.clear();
    for (int hd = 0; hd < heads; ++hd) {
      auto r = detail::attention_impl<T>(lc.q.middleCols(hd * d, d), lc.k.middleCols(hd * d, d),
                                         lc.v.middleCols(hd * d, d), c.mask, cfg.mask_mode);
      lc.ctx.middleCols(hd * d, d) = r.out;
      r.out.resize(0, 0);
      lc.heads.push_back(std::move(r));
    }
    Matrix<T> a = detail::affine(lc.ctx, lw.wo, lw.bo);
    if (drop) {
      lc.drop1 = detail::dropout_mask<T>(n, h, cfg.dropout, *rng);
      a = a.cwiseProduct(lc.drop1);
    }
    lc.x1 = layer_norm(Matrix<T>(x + a), lw.ln1_g, lw.ln1_b, &lc.ln1);
    lc.h_pre = detail::affine(lc.x1, lw.w1, lw.b1);
    lc.h_act = lc.h_pre.unaryExpr([](T v) { return gelu(v); });
    Matrix<T> f = detail::affine(lc.h_act, lw.w2, lw.b2);
    if (drop) {
      lc.drop2 = detail::dropout_mask<T>(n, h, cfg.dropout, *rng);
      f = f.cwiseProduct(lc.drop2);
    }
    x = layer_norm(Matrix<T>(lc.x1 + f), lw.ln2_g, lw.ln2_b, &lc.ln2);
  }
  if (!x.allFinite()) throw NonFiniteError("non-finite encoder activation");
  return x;
}

// Accumulates weight gradients into `grad` and returns d(loss)/d(embedded).
template <class T>
Matrix<T> encoder_backward(const Matrix<T>& d_out, const EncoderWeights<T>& w,
                           const EncoderConfig& cfg, const EncoderCache<T>& c,
                           EncoderWeights<T>& grad) {
  const int h = cfg.hidden;
  const int d = h / cfg.heads;
  Matrix<T> dx = d_out;
  for (std::size_t li = w.layers.size(); li-- > 0;) {
    const LayerWeights<T>& lw = w.layers[li];
    const LayerCache<T>& lc = c.layers[li];
    LayerWeights<T>& lg = grad.layers[li];

    Matrix<T> dr2 = layer_norm_backward(dx, lw.ln2_g, lc.ln2, lg.ln2_g, lg.ln2_b);
    Matrix<T> dx1 = dr2;
    Matrix<T> df = lc.drop2.size() ? Matrix<T>(dr2.cwiseProduct(lc.drop2)) : dr2;
    lg.w2.noalias() += lc.h_act.transpose() * df;
    lg.b2.row(0) += df.colwise().sum();
    Matrix<T> dh = df * lw.w2.transpose();
    for (Eigen::Index i = 0; i < dh.size(); ++i) dh.data()[i] *= gelu_grad(lc.h_pre.data()[i]);
    lg.w1.noalias() += lc.x1.transpose() * dh;
    lg.b1.row(0) += dh.colwise().sum();
    dx1.noalias() += dh * lw.w1.transpose();

    Matrix<T> dr1 = layer_norm_backward(dx1, lw.ln1_g, lc.ln1, lg.ln1_g, lg.ln1_b);
    Matrix<T> dxin = dr1;
    Matrix<T> da = lc.drop1.size() ? Matrix<T>(dr1.cwiseProduct(lc.drop1)) : dr1;
    lg.wo.noalias() += lc.ctx.transpose() * da;
    lg.bo.row(0) += da.colwise().sum();
    Matrix<T> dctx = da * lw.wo.transpose();

    Matrix<T> dq(dctx.rows(), h), dk(dctx.rows(), h), dv(dctx.rows(), h);
    for (int hd = 0; hd < cfg.heads; ++hd) {
      auto g = detail::attention_backward_impl<T>(
          lc.q.middleCols(hd * d, d), lc.k.middleCols(hd * d, d), lc.v.middleCols(hd * d, d),
          c.mask, lc.heads[hd], dctx.middleCols(hd * d, d), cfg.mask_mode);
      dq.middleCols(hd * d, d) = g.dq;
      dk.middleCols(hd * d, d) = g.dk;
      dv.middleCols(hd * d, d) = g.dv;
    }
    lg.wq.noalias() += lc.x.transpose() * dq;
    lg.wk.noalias() += lc.x.transpose() * dk;
    lg.wv.noalias() += lc.x.transpose() * dv;
    lg.bq.row(0) += dq.colwise().sum();
    lg.bk.row(0) += dk.colwise().sum();
    lg.bv.row(0) += dv.colwise().sum();
    dxin.noalias() += dq * lw.wq.transpose();
    dxin.noalias() += dk * lw.wk.transpose();
    dxin.noalias() += dv * lw.wv.transpose();
    dx = std::move(dxin);
  }
  if (c.drop0.size()) dx = dx.cwiseProduct(c.drop0);
  return layer_norm_backward(dx, w.in_ln_g, c.in_ln, grad.in_ln_g, grad.in_ln_b);
}

}  // namespace tabbin

#endif  // TABBIN_ENCODER_HPP_
