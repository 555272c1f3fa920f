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

// Token embedding layer: the sum of six trainable components (token, number
// features, in-cell position, in-table position, unit/nesting features and
// inferred type) together with its backward pass.

#ifndef TABBIN_EMBEDDING_HPP_
#define TABBIN_EMBEDDING_HPP_

#include <string>
#include <vector>

#include "tabbin/errors.hpp"
#include "tabbin/featurizer.hpp"
#include "tabbin/sequence.hpp"
#include "tabbin/tensor.hpp"

namespace tabbin {

struct EmbeddingShape {
  int vocab = kNumReserved;
  int hidden = 48;                           // H
  int positions = kDefaultPositionBound;     // G
  int cell_positions = kMaxCellTokens;       // I
  int types = kNumTypes;                     // T

  void validate() const {
    if (hidden <= 0 || hidden % 12 != 0) {
      throw ConfigError("hidden size must be a positive multiple of 12, got " + std::to_string(hidden));
    }
    if (vocab < kNumReserved) throw ConfigError("vocabulary smaller than the reserved tokens");
    if (positions < 1 || cell_positions < 1 || types < 1) throw ConfigError("bad embedding bounds");
  }
  friend bool operator==(const EmbeddingShape&, const EmbeddingShape&) = default;
};

template <class T>
struct EmbeddingWeights {
  Matrix<T> tok;                   // V x H
  Matrix<T> mag, pre, fst, lst;    // 11 x H/4
  Matrix<T> cpos;                  // I x H
  Matrix<T> vr, vc, hr, hc, nr, nc;  // G x H/6
  Matrix<T> fmt;                   // F x H
  Matrix<T> fmt_bias;              // 1 x H
  Matrix<T> type;                  // T x H

  EmbeddingWeights() = default;

  explicit EmbeddingWeights(const EmbeddingShape& s) {
    s.validate();
    const int h = s.hidden;
    tok = Matrix<T>::Zero(s.vocab, h);
    for (auto* m : {&mag, &pre, &fst, &lst}) *m = Matrix<T>::Zero(kNumberFeatureRows, h / 4);
    cpos = Matrix<T>::Zero(s.cell_positions, h);
    for (auto* m : {&vr, &vc, &hr, &hc, &nr, &nc}) *m = Matrix<T>::Zero(s.positions, h / 6);
    fmt = Matrix<T>::Zero(kNumCellFeatures, h);
    fmt_bias = Matrix<T>::Zero(1, h);
    type = Matrix<T>::Zero(s.types, h);
  }

  EmbeddingShape shape() const {
    return {static_cast<int>(tok.rows()), static_cast<int>(tok.cols()), static_cast<int>(vr.rows()),
            static_cast<int>(cpos.rows()), static_cast<int>(type.rows())};
  }
  int hidden() const { return static_cast<int>(tok.cols()); }

  template <class F>
  void visit(F&& f) {
    f("tok", tok); f("mag", mag); f("pre", pre); f("fst", fst); f("lst", lst);
    f("cpos", cpos);
    f("vr", vr); f("vc", vc); f("hr", hr); f("hc", hc); f("nr", nr); f("nc", nc);
    f("fmt", fmt); f("fmt_bias", fmt_bias); f("type", type);
  }
  template <class F>
  void visit(F&& f) const {
    const_cast<EmbeddingWeights*>(this)->visit(
        [&](const std::string& name, Matrix<T>& m) { f(name, static_cast<const Matrix<T>&>(m)); });
  }

  // Normal(0, stddev) everywhere except the bias, which stays zero.
  void init(Rng& rng, double stddev = 0.02) {
    visit([&](const std::string& name, Matrix<T>& m) {
      if (name == "fmt_bias") m.setZero();
      else fill_normal(m, rng, stddev);
    });
  }
};

template <class T>
struct EmbeddingComponents {
  RowVector<T> tok, num, cpos, tpos, fmt, type;
};

namespace detail {

inline void check_index(int idx, Eigen::Index bound, const char* what) {
  if (idx < 0 || idx >= bound) {
    throw IndexError(std::string(what) + " index " + std::to_string(idx) + " out of range [0, " +
                     std::to_string(bound) + ")");
  }
}

inline std::array<int, 6> coord_indices(const BiCoordinate& c) {
  return {c.v.row, c.v.col, c.h.row, c.h.col, c.n.row, c.n.col};
}

template <class T>
std::array<const Matrix<T>*, 6> position_tables(const EmbeddingWeights<T>& w) {
  return {&w.vr, &w.vc, &w.hr, &w.hc, &w.nr, &w.nc};
}
template <class T>
std::array<Matrix<T>*, 6> position_tables(EmbeddingWeights<T>& w) {
  return {&w.vr, &w.vc, &w.hr, &w.hc, &w.nr, &w.nc};
}

template <class T>
std::array<const Matrix<T>*, 4> number_tables(const EmbeddingWeights<T>& w) {
  return {&w.mag, &w.pre, &w.fst, &w.lst};
}
template <class T>
std::array<Matrix<T>*, 4> number_tables(EmbeddingWeights<T>& w) {
  return {&w.mag, &w.pre, &w.fst, &w.lst};
}

inline std::array<int, 4> number_indices(const NumberFeatures& f) {
  return {f.mag, f.pre, f.fst, f.lst};
}

}  // namespace detail

template <class T>
EmbeddingComponents<T> embed_components(const TokenRecord& rec, const EmbeddingWeights<T>& w) {
  const int h = w.hidden();
  EmbeddingComponents<T> out;
  detail::check_index(rec.token_id, w.tok.rows(), "token");
  out.tok = w.tok.row(rec.token_id);

  out.num = RowVector<T>::Zero(h);
  if (rec.is_number && rec.num) {
    auto tables = detail::number_tables(w);
    auto idx = detail::number_indices(*rec.num);
    for (int k = 0; k < 4; ++k) {
      detail::check_index(idx[k], tables[k]->rows(), "number feature");
      out.num.segment(k * (h / 4), h / 4) = tables[k]->row(idx[k]);
    }
  }

  detail::check_index(rec.in_pos, w.cpos.rows(), "in-cell position");
  out.cpos = w.cpos.row(rec.in_pos);

  out.tpos.resize(h);
  auto tables = detail::position_tables(w);
  auto idx = detail::coord_indices(rec.coord);
  for (int k = 0; k < 6; ++k) {
    detail::check_index(idx[k], tables[k]->rows(), "table position");
    out.tpos.segment(k * (h / 6), h / 6) = tables[k]->row(idx[k]);
  }

  out.fmt = w.fmt_bias.row(0);
  for (int k = 0; k < kNumCellFeatures; ++k) {
    if (rec.feat[k]) out.fmt += w.fmt.row(k);
  }

  detail::check_index(rec.type_id, w.type.rows(), "type");
  out.type = w.type.row(rec.type_id);
  return out;
}

// Sum of the components; the type and unit/nesting components are dropped
// when ablated.
template <class T>
RowVector<T> embed_token(const TokenRecord& rec, const EmbeddingWeights<T>& w,
                         const AblationFlags& flags = {}) {
  auto c = embed_components(rec, w);
  RowVector<T> e = c.tok + c.num + c.cpos + c.tpos;
  if (!flags.no_type) e += c.type;
  if (!flags.no_units_nesting) e += c.fmt;
  return e;
}

template <class T>
Matrix<T> embed_sequence(const std::vector<TokenRecord>& tokens, const EmbeddingWeights<T>& w,
                         const AblationFlags& flags = {}) {
  Matrix<T> out(static_cast<Eigen::Index>(tokens.size()), w.hidden());
  for (std::size_t i = 0; i < tokens.size(); ++i) out.row(i) = embed_token(tokens[i], w, flags);
  return out;
}

// Accumulates d(loss)/d(weights) into `grad` given d(loss)/d(embeddings).
template <class T>
void embed_sequence_backward(const std::vector<TokenRecord>& tokens, const Matrix<T>& d_out,
                             const AblationFlags& flags, EmbeddingWeights<T>& grad) {
  const int h = grad.hidden();
  auto pos_tables = detail::position_tables(grad);
  auto num_tables = detail::number_tables(grad);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const TokenRecord& rec = tokens[i];
    auto d = d_out.row(i);
    grad.tok.row(rec.token_id) += d;
    if (rec.is_number && rec.num) {
      auto idx = detail::number_indices(*rec.num);
      for (int k = 0; k < 4; ++k) num_tables[k]->row(idx[k]) += d.segment(k * (h / 4), h / 4);
    }
    grad.cpos.row(rec.in_pos) += d;
    auto idx = detail::coord_indices(rec.coord);
    for (int k = 0; k < 6; ++k) pos_tables[k]->row(idx[k]) += d.segment(k * (h / 6), h / 6);
    if (!flags.no_units_nesting) {
      grad.fmt_bias.row(0) += d;
      for (int k = 0; k < kNumCellFeatures; ++k) {
        if (rec.feat[k]) grad.fmt.row(k) += d;
      }
    }
    if (!flags.no_type) grad.type.row(rec.type_id) += d;
  }
}

}  // namespace tabbin

#endif  // TABBIN_EMBEDDING_HPP_
