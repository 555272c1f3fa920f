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

// Self-supervised training of a segment model: masked language modeling plus
// cell-level cloze, optimized with Adam.

#ifndef TABBIN_PRETRAINING_HPP_
#define TABBIN_PRETRAINING_HPP_

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabbin/errors.hpp"
#include "tabbin/model.hpp"
#include "tabbin/parallel.hpp"
#include "tabbin/sequence.hpp"
#include "tabbin/table.hpp"

namespace tabbin {

struct TrainConfig {
  int steps = 50000;
  int batch_size = 12;
  double lr = 2e-5;
  double mlm_rate = 0.15;
  bool mlm_mix = true;  // 80/10/10 replacement; off means always [MASK]
  int clc_cells_per_seq = 2;
  int clc_candidates = 10;
  double clc_temperature = 0.1;
  double mlm_weight = 1.0;
  double clc_weight = 1.0;
  double max_grad_norm = 0.0;  // 0 disables clipping
  double init_stddev = 0.02;
  int eval_sequences = 32;
  std::uint64_t seed = 0;
  SegmentKind segment = SegmentKind::kDataRow;
  AblationFlags ablations;

  // Workstation profile used by the desk-scale experiments.
  static TrainConfig desk(SegmentKind seg = SegmentKind::kDataRow) {
    TrainConfig c;
    c.steps = 1000;
    c.batch_size = 8;
    c.lr = 1e-3;
    c.max_grad_norm = 1.0;
    c.segment = seg;
    return c;
  }

  void validate() const {
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (!(mlm_rate > 0.0 && mlm_rate <= 1.0)) throw ConfigError("mlm_rate must be in (0, 1]");
    if (clc_cells_per_seq < 0) throw ConfigError("clc_cells_per_seq must be >= 0");
    if (clc_candidates < 2) throw ConfigError("clc_candidates must be >= 2");
    if (!(clc_temperature > 0.0)) throw ConfigError("clc_temperature must be > 0");
    if (mlm_weight < 0.0 || clc_weight < 0.0) throw ConfigError("loss weights must be >= 0");
    if (max_grad_norm < 0.0) throw ConfigError("max_grad_norm must be >= 0");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"mlm_rate", c.mlm_rate},
          {"mlm_mix", c.mlm_mix},
          {"clc_cells_per_seq", c.clc_cells_per_seq},
          {"clc_candidates", c.clc_candidates},
          {"clc_temperature", c.clc_temperature},
          {"mlm_weight", c.mlm_weight},
          {"clc_weight", c.clc_weight},
          {"max_grad_norm", c.max_grad_norm},
          {"init_stddev", c.init_stddev},
          {"eval_sequences", c.eval_sequences},
          {"seed", c.seed},
          {"segment", std::string(to_string(c.segment))},
          {"ablations", to_json(c.ablations)}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.mlm_rate = j.value("mlm_rate", c.mlm_rate);
  c.mlm_mix = j.value("mlm_mix", c.mlm_mix);
  c.clc_cells_per_seq = j.value("clc_cells_per_seq", c.clc_cells_per_seq);
  c.clc_candidates = j.value("clc_candidates", c.clc_candidates);
  c.clc_temperature = j.value("clc_temperature", c.clc_temperature);
  c.mlm_weight = j.value("mlm_weight", c.mlm_weight);
  c.clc_weight = j.value("clc_weight", c.clc_weight);
  c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
  c.init_stddev = j.value("init_stddev", c.init_stddev);
  c.eval_sequences = j.value("eval_sequences", c.eval_sequences);
  c.seed = j.value("seed", c.seed);
  if (j.contains("segment")) c.segment = segment_from_string(j["segment"].get<std::string>());
  if (j.contains("ablations")) c.ablations = ablation_flags_from_json(j["ablations"]);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Instances.

inline bool is_maskable(const TokenSequence& seq, int i) {
  return seq.slots[i].role == SlotRole::kContent;
}

struct MlmInstance {
  TokenSequence input;
  std::map<int, int> targets;  // position -> original token id
};

struct MlmOptions {
  double rate = 0.15;
  bool mix = true;
  int vocab_size = kNumReserved;
};

// Positions in `exclude` are never selected.
inline MlmInstance make_mlm_instance(const TokenSequence& seq, const MlmOptions& opt, Rng& rng,
                                     const std::set<int>& exclude = {}) {
  MlmInstance inst{seq, {}};
  std::vector<int> maskable;
  for (int i = 0; i < seq.size(); ++i) {
    if (is_maskable(seq, i) && !exclude.count(i)) maskable.push_back(i);
  }
  if (maskable.empty()) return inst;
  std::vector<int> chosen;
  for (int i : maskable) {
    if (rng.bernoulli(opt.rate)) chosen.push_back(i);
  }
  if (chosen.empty()) chosen.push_back(maskable[rng.below(maskable.size())]);
  for (int i : chosen) {
    TokenRecord& t = inst.input.tokens[i];
    inst.targets[i] = t.token_id;
    if (!opt.mix) {
      t.token_id = kMaskId;
      continue;
    }
    const double u = rng.uniform();
    if (u < 0.8) {
      t.token_id = kMaskId;
    } else if (u < 0.9 && opt.vocab_size > kNumReserved) {
      t.token_id = kNumReserved + static_cast<int>(rng.below(opt.vocab_size - kNumReserved));
    }
  }
  return inst;
}

struct ClcCell {
  int cell = -1;                                      // index into TokenSequence::cells
  std::vector<int> positions;                         // masked content positions
  std::vector<std::vector<TokenRecord>> candidates;   // candidate cell contents
  std::vector<std::string> candidate_keys;
  int answer = 0;
};

struct ClcInstance {
  TokenSequence input;
  std::vector<ClcCell> cells;
};

namespace detail {

inline std::map<int, std::vector<int>> content_positions(const TokenSequence& seq) {
  std::map<int, std::vector<int>> out;
  for (int i = 0; i < seq.size(); ++i) {
    if (seq.slots[i].role == SlotRole::kContent) out[seq.slots[i].cell].push_back(i);
  }
  return out;
}

}  // namespace detail

// Masks `k` whole cells. Each gets a candidate list made of its own content
// and up to n_candidates-1 distinct other cell strings of the same table.
inline ClcInstance make_clc_instance(const TokenSequence& seq, Rng& rng, int k,
                                     int n_candidates = 10) {
  auto cells = detail::content_positions(seq);
  if (static_cast<int>(cells.size()) < k + 1) {
    throw TooFewCellsError("cloze needs " + std::to_string(k + 1) + " non-empty cells, sequence has " +
                           std::to_string(cells.size()));
  }
  std::vector<int> ids;
  for (const auto& [c, _] : cells) ids.push_back(c);
  rng.shuffle(ids);
  ids.resize(k);
  std::sort(ids.begin(), ids.end());

  ClcInstance inst{seq, {}};
  const auto& pool = *seq.table_cells;
  for (int c : ids) {
    ClcCell cc;
    cc.cell = c;
    cc.positions = cells[c];
    const CellContent& answer = pool.at(seq.cells[c].pool_index);
    std::vector<const CellContent*> others;
    std::set<std::string> seen{answer.key};
    for (const auto& p : pool) {
      if (p.tokens.empty() || !seen.insert(p.key).second) continue;
      others.push_back(&p);
    }
    rng.shuffle(others);
    if (static_cast<int>(others.size()) > n_candidates - 1) others.resize(n_candidates - 1);
    std::vector<const CellContent*> cand = others;
    cand.push_back(&answer);
    rng.shuffle(cand);
    for (std::size_t i = 0; i < cand.size(); ++i) {
      if (cand[i] == &answer) cc.answer = static_cast<int>(i);
      cc.candidates.push_back(cand[i]->tokens);
      cc.candidate_keys.push_back(cand[i]->key);
    }
    for (int pos : cc.positions) inst.input.tokens[pos].token_id = kMaskId;
    inst.cells.push_back(std::move(cc));
  }
  return inst;
}

struct TrainingInstance {
  TokenSequence input;
  std::map<int, int> mlm_targets;
  std::vector<ClcCell> clc;
};

// Cloze on up to k cells (fewer when the sequence is small), then MLM over the
// remaining content tokens.
inline TrainingInstance make_training_instance(const TokenSequence& seq, const TrainConfig& cfg,
                                               int vocab_size, Rng& rng) {
  TrainingInstance inst{seq, {}, {}};
  const int cells = static_cast<int>(detail::content_positions(seq).size());
  const int k = std::min(cfg.clc_cells_per_seq, cells - 1);
  std::set<int> clc_positions;
  if (k >= 1 && cfg.clc_weight > 0.0) {
    ClcInstance clc = make_clc_instance(seq, rng, k, cfg.clc_candidates);
    inst.input = std::move(clc.input);
    inst.clc = std::move(clc.cells);
    for (const auto& c : inst.clc) clc_positions.insert(c.positions.begin(), c.positions.end());
  }
  MlmInstance mlm = make_mlm_instance(inst.input, {cfg.mlm_rate, cfg.mlm_mix, vocab_size}, rng,
                                      clc_positions);
  inst.input = std::move(mlm.input);
  inst.mlm_targets = std::move(mlm.targets);
  return inst;
}

// ---------------------------------------------------------------------------
// Loss.

struct LossValue {
  double mlm = 0.0;  // mean cross-entropy over MLM targets
  double clc = 0.0;  // mean cross-entropy over cloze cells
  int mlm_count = 0;
  int clc_count = 0;
  double total(double wm = 1.0, double wc = 1.0) const { return wm * mlm + wc * clc; }
};

struct LossWeights {
  double mlm = 1.0;
  double clc = 1.0;
  double temperature = 0.1;
};

namespace detail {

// Candidate cell encoding: mean over its tokens of token plus number
// embedding (structure-free, so the cloze target does not depend on the
// position being predicted).
template <class T>
RowVector<T> candidate_encoding(const std::vector<TokenRecord>& toks, const EmbeddingWeights<T>& w) {
  const int h = w.hidden();
  RowVector<T> e = RowVector<T>::Zero(h);
  for (const auto& r : toks) {
    e += w.tok.row(r.token_id);
    if (r.is_number && r.num) {
      auto idx = number_indices(*r.num);
      auto tabs = number_tables(w);
      for (int k = 0; k < 4; ++k) e.segment(k * (h / 4), h / 4) += tabs[k]->row(idx[k]);
    }
  }
  return e / static_cast<T>(toks.size());
}

template <class T>
void candidate_encoding_backward(const std::vector<TokenRecord>& toks, const RowVector<T>& de,
                                 EmbeddingWeights<T>& g) {
  const int h = g.hidden();
  const RowVector<T> d = de / static_cast<T>(toks.size());
  for (const auto& r : toks) {
    g.tok.row(r.token_id) += d;
    if (r.is_number && r.num) {
      auto idx = number_indices(*r.num);
      auto tabs = number_tables(g);
      for (int k = 0; k < 4; ++k) tabs[k]->row(idx[k]) += d.segment(k * (h / 4), h / 4);
    }
  }
}

inline constexpr double kNormEps = 1e-12;

}  // namespace detail

// Forward pass, loss and (when `grad` is non-null) accumulation of
// d(weighted loss)/d(weights) into `grad`. Dropout runs when `dropout_rng` is
// non-null.
template <class T>
LossValue forward_backward(const SegmentModel<T>& m, const TrainingInstance& inst,
                           const LossWeights& lw, Rng* dropout_rng, SegmentModel<T>* grad) {
  const TokenSequence& seq = inst.input;
  const int n = seq.size();
  const int h = m.cfg.hidden;
  EncoderCache<T> cache;
  Matrix<T> x = embed_sequence(seq.tokens, m.emb, m.flags);
  Matrix<T> hs = encoder_forward(x, seq.visibility, m.enc, m.cfg, dropout_rng, &cache);
  Matrix<T> dhs = Matrix<T>::Zero(n, h);
  LossValue loss;

  if (!inst.mlm_targets.empty()) {
    const int c = static_cast<int>(inst.mlm_targets.size());
    Matrix<T> p(c, h);
    std::vector<int> pos, tgt;
    for (const auto& [i, id] : inst.mlm_targets) {
      p.row(static_cast<Eigen::Index>(pos.size())) = hs.row(i);
      pos.push_back(i);
      tgt.push_back(id);
    }
    Matrix<T> logits = p * m.emb.tok.transpose();
    logits.rowwise() += m.enc.mlm_bias.row(0);
    double total = 0.0;
    for (int r = 0; r < c; ++r) {
      auto row = logits.row(r);
      const T mx = row.maxCoeff();
      row = (row.array() - mx).exp();
      const T z = row.sum();
      row /= z;
      total -= std::log(std::max<double>(row(tgt[r]), 1e-300));
    }
    loss.mlm = total / c;
    loss.mlm_count = c;
    if (grad) {
      Matrix<T> dlogits = logits;  // softmax probabilities
      for (int r = 0; r < c; ++r) dlogits(r, tgt[r]) -= T(1);
      dlogits *= static_cast<T>(lw.mlm / c);
      grad->enc.mlm_bias.row(0) += dlogits.colwise().sum();
      grad->emb.tok.noalias() += dlogits.transpose() * p;
      Matrix<T> dp = dlogits * m.emb.tok;
      for (int r = 0; r < c; ++r) dhs.row(pos[r]) += dp.row(r);
    }
  }

  if (!inst.clc.empty()) {
    const double tau = lw.temperature;
    const int cells = static_cast<int>(inst.clc.size());
    double total = 0.0;
    for (const auto& cc : inst.clc) {
      RowVector<T> p = RowVector<T>::Zero(h);
      for (int i : cc.positions) p += hs.row(i);
      p /= static_cast<T>(cc.positions.size());
      const double np = std::sqrt(static_cast<double>(p.squaredNorm()) + detail::kNormEps);
      const int nc = static_cast<int>(cc.candidates.size());
      std::vector<RowVector<T>> es;
      std::vector<double> ne(nc), cosv(nc), s(nc);
      for (int j = 0; j < nc; ++j) {
        es.push_back(detail::candidate_encoding(cc.candidates[j], m.emb));
        ne[j] = std::sqrt(static_cast<double>(es[j].squaredNorm()) + detail::kNormEps);
        cosv[j] = static_cast<double>(p.dot(es[j])) / (np * ne[j]);
        s[j] = cosv[j] / tau;
      }
      const double mx = *std::max_element(s.begin(), s.end());
      double z = 0.0;
      for (double v : s) z += std::exp(v - mx);
      total -= s[cc.answer] - mx - std::log(z);
      if (!grad) continue;
      RowVector<T> dp = RowVector<T>::Zero(h);
      for (int j = 0; j < nc; ++j) {
        const double q = std::exp(s[j] - mx) / z;
        const double ds = (q - (j == cc.answer ? 1.0 : 0.0)) * lw.clc / cells;
        const double dcos = ds / tau;
        dp += (es[j] / static_cast<T>(np * ne[j]) - p * static_cast<T>(cosv[j] / (np * np))) *
              static_cast<T>(dcos);
        RowVector<T> de =
            (p / static_cast<T>(np * ne[j]) - es[j] * static_cast<T>(cosv[j] / (ne[j] * ne[j]))) *
            static_cast<T>(dcos);
        detail::candidate_encoding_backward(cc.candidates[j], de, grad->emb);
      }
      dp /= static_cast<T>(cc.positions.size());
      for (int i : cc.positions) dhs.row(i) += dp;
    }
    loss.clc = total / cells;
    loss.clc_count = cells;
  }

  if (grad) {
    Matrix<T> dx = encoder_backward(dhs, m.enc, m.cfg, cache, grad->enc);
    embed_sequence_backward(seq.tokens, dx, m.flags, grad->emb);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Optimizer.

template <class T>
class Adam {
 public:
  Adam(const SegmentModel<T>& like, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(like.zeros_like()), v_(like.zeros_like()) {}

  void step(SegmentModel<T>& w, const SegmentModel<T>& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    const T alpha = static_cast<T>(lr_ * std::sqrt(c2) / c1);
    const T b1 = static_cast<T>(b1_), b2 = static_cast<T>(b2_);
    const T eps = static_cast<T>(eps_ * std::sqrt(c2));
    std::vector<Matrix<T>*> ws, ms, vs;
    std::vector<const Matrix<T>*> gs;
    w.visit([&](const std::string&, Matrix<T>& x) { ws.push_back(&x); });
    m_.visit([&](const std::string&, Matrix<T>& x) { ms.push_back(&x); });
    v_.visit([&](const std::string&, Matrix<T>& x) { vs.push_back(&x); });
    g.visit([&](const std::string&, const Matrix<T>& x) { gs.push_back(&x); });
    for (std::size_t i = 0; i < ws.size(); ++i) {
      auto ga = gs[i]->array();
      ms[i]->array() = b1 * ms[i]->array() + (T(1) - b1) * ga;
      vs[i]->array() = b2 * vs[i]->array() + (T(1) - b2) * ga.square();
      ws[i]->array() -= alpha * ms[i]->array() / (vs[i]->array().sqrt() + eps);
    }
  }

  long steps_taken() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  SegmentModel<T> m_, v_;
};

template <class T>
double gradient_norm(const SegmentModel<T>& g) {
  double s = 0.0;
  g.visit([&](const std::string&, const Matrix<T>& m) { s += m.template cast<double>().squaredNorm(); });
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Training loop.

struct StepLog {
  int step = 0;
  double mlm_loss = 0.0;
  double clc_loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

inline nlohmann::json to_json(const StepLog& s) {
  return {{"step", s.step}, {"mlm_loss", s.mlm_loss}, {"clc_loss", s.clc_loss},
          {"lr", s.lr}, {"wall_ms", s.wall_ms}};
}

struct TrainResult {
  SegmentModel<float> model;
  double initial_mlm_loss = 0.0;  // on the fixed evaluation set, before training
  double final_mlm_loss = 0.0;    // same set, after training
  int n_sequences = 0;
  std::vector<StepLog> log;
};

// Every sequence of `segment` across the corpus that has something to mask,
// with ablations applied.
inline std::vector<TokenSequence> segment_sequences(const std::vector<Table>& corpus,
                                                    SegmentKind segment, const Featurizer& fz,
                                                    const AblationFlags& flags = {}) {
  std::vector<TokenSequence> out;
  for (const auto& t : corpus) {
    for (auto& s : build_sequences(t, segment, fz)) {
      bool any = false;
      for (int i = 0; i < s.size() && !any; ++i) any = is_maskable(s, i);
      if (any) out.push_back(apply_ablation(std::move(s), flags));
    }
  }
  return out;
}

namespace detail {

inline constexpr std::uint64_t kStreamInit = 1;
inline constexpr std::uint64_t kStreamOrder = 2;
inline constexpr std::uint64_t kStreamInstance = 3;
inline constexpr std::uint64_t kStreamDropout = 4;
inline constexpr std::uint64_t kStreamEval = 5;

}  // namespace detail

// Mean MLM loss over fixed masked instances (no dropout, plain [MASK]).
template <class T>
double evaluate_mlm(const SegmentModel<T>& m, const std::vector<MlmInstance>& set) {
  double total = 0.0;
  long count = 0;
  for (const auto& inst : set) {
    TrainingInstance ti{inst.input, inst.targets, {}};
    LossValue v = forward_backward<T>(m, ti, {}, nullptr, nullptr);
    total += v.mlm * v.mlm_count;
    count += v.mlm_count;
  }
  return count ? total / count : 0.0;
}

inline std::vector<MlmInstance> make_eval_set(const std::vector<TokenSequence>& seqs,
                                              const TrainConfig& cfg, int vocab_size) {
  std::vector<std::size_t> order(seqs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng pick = Rng::derive(cfg.seed, detail::kStreamEval);
  pick.shuffle(order);
  const std::size_t n = std::min<std::size_t>(order.size(), std::max(cfg.eval_sequences, 1));
  std::vector<MlmInstance> out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::derive(cfg.seed, detail::kStreamEval, i + 1);
    out.push_back(make_mlm_instance(seqs[order[i]], {cfg.mlm_rate, false, vocab_size}, rng));
  }
  return out;
}

// Trains one segment model. Per-sequence gradients are computed in parallel
// and summed in a fixed order, so results do not depend on thread count.
inline TrainResult train(const std::vector<Table>& corpus, const Featurizer& fz,
                         const TrainConfig& cfg, const EncoderConfig& ecfg,
                         std::ostream* log = nullptr) {
  cfg.validate();
  ecfg.validate();
  if (corpus.empty()) throw NoSequencesError("empty corpus");
  const auto seqs = segment_sequences(corpus, cfg.segment, fz, cfg.ablations);
  if (seqs.empty()) {
    throw NoSequencesError("no " + std::string(to_string(cfg.segment)) + " sequences in corpus");
  }
  const int vocab = fz.vocab.size();
  EmbeddingShape shape;
  shape.vocab = vocab;
  shape.hidden = ecfg.hidden;

  TrainResult res;
  res.n_sequences = static_cast<int>(seqs.size());
  res.model = SegmentModel<float>(cfg.segment, shape, ecfg, cfg.ablations);
  Rng init_rng = Rng::derive(cfg.seed, detail::kStreamInit);
  res.model.init(init_rng, cfg.init_stddev);

  const auto eval_set = make_eval_set(seqs, cfg, vocab);
  res.initial_mlm_loss = evaluate_mlm(res.model, eval_set);

  Adam<float> adam(res.model, cfg.lr);
  const LossWeights lw{cfg.mlm_weight, cfg.clc_weight, cfg.clc_temperature};
  std::vector<SegmentModel<float>> grads(cfg.batch_size, res.model.zeros_like());
  std::vector<LossValue> losses(cfg.batch_size);
  SegmentModel<float> total = res.model.zeros_like();

  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  std::uint64_t epoch = 0;
  auto next_index = [&]() {
    if (cursor == order.size()) {
      order.resize(seqs.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng r = Rng::derive(cfg.seed, detail::kStreamOrder, epoch++);
      r.shuffle(order);
      cursor = 0;
    }
    return order[cursor++];
  };

  const auto start = std::chrono::steady_clock::now();
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<std::size_t> batch(cfg.batch_size);
    for (auto& b : batch) b = next_index();
    try {
      parallel_for(batch.size(), [&](std::size_t b) {
        const std::uint64_t key = static_cast<std::uint64_t>(step) * 1000003ULL + b;
        Rng irng = Rng::derive(cfg.seed, detail::kStreamInstance, key);
        Rng drng = Rng::derive(cfg.seed, detail::kStreamDropout, key);
        TrainingInstance inst = make_training_instance(seqs[batch[b]], cfg, vocab, irng);
        grads[b].set_zero();
        losses[b] = forward_backward<float>(res.model, inst, lw, &drng, &grads[b]);
      });
    } catch (const NonFiniteError& e) {
      throw NonFiniteError("step " + std::to_string(step) + ": " + e.what());
    }

    total.set_zero();
    std::vector<Matrix<float>*> dst;
    total.visit([&](const std::string&, Matrix<float>& m) { dst.push_back(&m); });
    for (auto& g : grads) {
      std::size_t i = 0;
      g.visit([&](const std::string&, const Matrix<float>& m) { *dst[i++] += m; });
    }
    const float inv = 1.0f / static_cast<float>(cfg.batch_size);
    for (auto* m : dst) *m *= inv;
    if (cfg.max_grad_norm > 0.0) {
      const double norm = gradient_norm(total);
      if (norm > cfg.max_grad_norm) {
        const float scale = static_cast<float>(cfg.max_grad_norm / norm);
        for (auto* m : dst) *m *= scale;
      }
    }
    if (!total.all_finite()) throw NonFiniteError("non-finite gradient at step " + std::to_string(step));
    adam.step(res.model, total);
    if (!res.model.all_finite()) throw NonFiniteError("non-finite weights at step " + std::to_string(step));

    StepLog sl;
    sl.step = step;
    sl.lr = cfg.lr;
    int mlm_n = 0, clc_n = 0;
    for (const auto& l : losses) {
      sl.mlm_loss += l.mlm * l.mlm_count;
      sl.clc_loss += l.clc * l.clc_count;
      mlm_n += l.mlm_count;
      clc_n += l.clc_count;
    }
    if (mlm_n) sl.mlm_loss /= mlm_n;
    if (clc_n) sl.clc_loss /= clc_n;
    sl.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (log) *log << to_json(sl).dump() << '\n';
    res.log.push_back(sl);
  }
  res.final_mlm_loss = evaluate_mlm(res.model, eval_set);
  return res;
}

}  // namespace tabbin

#endif  // TABBIN_PRETRAINING_HPP_
