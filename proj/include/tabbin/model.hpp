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

// One segment model: embedding layer plus encoder stack.

#ifndef TABBIN_MODEL_HPP_
#define TABBIN_MODEL_HPP_

#include <cstddef>
#include <cstring>
#include <string>
#include <vector>

#include "tabbin/embedding.hpp"
#include "tabbin/encoder.hpp"
#include "tabbin/sequence.hpp"

namespace tabbin {

template <class T>
struct SegmentModel {
  SegmentKind segment = SegmentKind::kDataRow;
  EncoderConfig cfg;
  AblationFlags flags;  // applied to every sequence the model sees
  EmbeddingWeights<T> emb;
  EncoderWeights<T> enc;

  SegmentModel() = default;
  SegmentModel(SegmentKind seg, const EmbeddingShape& shape, const EncoderConfig& c,
               const AblationFlags& f = {})
      : segment(seg), cfg(c), flags(f), emb(shape), enc(c, shape.vocab) {
    if (shape.hidden != c.hidden) throw ConfigError("embedding and encoder hidden sizes differ");
  }

  template <class F>
  void visit(F&& f) {
    emb.visit([&](const std::string& name, Matrix<T>& m) { f("emb." + name, m); });
    enc.visit([&](const std::string& name, Matrix<T>& m) { f("enc." + name, m); });
  }
  template <class F>
  void visit(F&& f) const {
    const_cast<SegmentModel*>(this)->visit(
        [&](const std::string& name, Matrix<T>& m) { f(name, static_cast<const Matrix<T>&>(m)); });
  }

  void init(Rng& rng, double stddev = 0.02) {
    emb.init(rng, stddev);
    enc.init(rng, stddev);
  }

  SegmentModel zeros_like() const {
    SegmentModel z = *this;
    z.set_zero();
    return z;
  }

  void set_zero() {
    visit([](const std::string&, Matrix<T>& m) { m.setZero(); });
  }

  template <class U>
  SegmentModel<U> cast() const {
    SegmentModel<U> out;
    out.segment = segment;
    out.cfg = cfg;
    out.flags = flags;
    out.emb = EmbeddingWeights<U>(emb.shape());
    out.enc = EncoderWeights<U>(cfg, emb.shape().vocab);
    std::vector<const Matrix<T>*> src;
    visit([&](const std::string&, const Matrix<T>& m) { src.push_back(&m); });
    std::size_t i = 0;
    out.visit([&](const std::string&, Matrix<U>& m) { m = src[i++]->template cast<U>(); });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Matrix<T>& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  bool all_finite() const {
    bool ok = true;
    visit([&](const std::string&, const Matrix<T>& m) { ok = ok && m.allFinite(); });
    return ok;
  }
};

// Bitwise equality of every tensor plus configuration.
template <class T>
bool identical(const SegmentModel<T>& a, const SegmentModel<T>& b) {
  if (a.segment != b.segment || !(a.cfg == b.cfg) || !(a.flags == b.flags)) return false;
  std::vector<const Matrix<T>*> xs, ys;
  a.visit([&](const std::string&, const Matrix<T>& m) { xs.push_back(&m); });
  b.visit([&](const std::string&, const Matrix<T>& m) { ys.push_back(&m); });
  if (xs.size() != ys.size()) return false;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i]->rows() != ys[i]->rows() || xs[i]->cols() != ys[i]->cols()) return false;
    if (std::memcmp(xs[i]->data(), ys[i]->data(), sizeof(T) * xs[i]->size()) != 0) return false;
  }
  return true;
}

// Hidden states for a sequence in inference mode (no dropout). The model's
// ablation flags are applied first.
template <class T>
Matrix<T> encode_sequence(const SegmentModel<T>& m, const TokenSequence& seq) {
  const TokenSequence s = m.flags.any() ? apply_ablation(seq, m.flags) : seq;
  Matrix<T> x = embed_sequence(s.tokens, m.emb, m.flags);
  return encoder_forward(x, s.visibility, m.enc, m.cfg);
}

}  // namespace tabbin

#endif  // TABBIN_MODEL_HPP_
