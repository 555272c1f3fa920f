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

// End-to-end helpers shared by the command-line tool and the test suites:
// featurizer construction, multi-segment training into a bundle, the
// gradient suite and resolved run configurations.

#ifndef TABBIN_PIPELINE_HPP_
#define TABBIN_PIPELINE_HPP_

#include <optional>
#include <set>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabbin/bundle.hpp"
#include "tabbin/eval.hpp"
#include "tabbin/gradcheck.hpp"
#include "tabbin/pretraining.hpp"

namespace tabbin {

// Everything a command needs, fully resolved before it runs.
struct RunConfig {
  std::string command;
  std::uint64_t seed = 0;
  EncoderConfig encoder;
  TrainConfig train = TrainConfig::desk();
  EvalOptions eval;
  nlohmann::json paths = nlohmann::json::object();
  nlohmann::json extra = nlohmann::json::object();
};

inline nlohmann::json to_json(const RunConfig& r) {
  return {{"command", r.command}, {"seed", r.seed},   {"encoder", to_json(r.encoder)},
          {"train", to_json(r.train)}, {"eval", to_json(r.eval)}, {"paths", r.paths},
          {"extra", r.extra}};
}

// Applies the "encoder", "train" and "eval" sections of a config file.
inline void apply_config(RunConfig& r, const nlohmann::json& j) {
  static const std::set<std::string> known = {"seed", "encoder", "train", "eval", "corpus"};
  for (const auto& [k, _] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown config section '" + k + "'");
  }
  if (j.contains("seed")) r.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("encoder")) r.encoder = encoder_config_from_json(j["encoder"], r.encoder);
  if (j.contains("train")) r.train = train_config_from_json(j["train"], r.train);
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    r.eval.k = e.value("k", r.eval.k);
    r.eval.use_lsh = e.value("use_lsh", r.eval.use_lsh);
    r.eval.table_recipe = e.value("table_recipe", r.eval.table_recipe);
    r.eval.exemplars = e.value("exemplars", r.eval.exemplars);
    r.eval.composite.missing_as_zero = e.value("missing_as_zero", r.eval.composite.missing_as_zero);
    if (e.contains("lsh")) {
      r.eval.lsh.planes = e["lsh"].value("planes", r.eval.lsh.planes);
      r.eval.lsh.bands = e["lsh"].value("bands", r.eval.lsh.bands);
      r.eval.lsh.rows = e["lsh"].value("rows", r.eval.lsh.rows);
    }
  }
}

inline Featurizer make_featurizer(const std::vector<Table>& corpus,
                                  const std::optional<TypeDictionary>& types = std::nullopt) {
  Featurizer fz;
  fz.vocab = build_vocabulary(corpus);
  if (types) fz.types = *types;
  return fz;
}

inline ModelBundle empty_bundle(Featurizer fz, const EncoderConfig& ecfg) {
  ecfg.validate();
  ModelBundle b;
  b.featurizer = std::move(fz);
  b.encoder = ecfg;
  return b;
}

// Trains the listed segment models with `base` (segment and ablations
// overridden) and stores them in `b`. Each segment gets its own seed stream.
inline void train_segments(ModelBundle& b, const std::vector<Table>& corpus,
                           const std::vector<SegmentKind>& segments, TrainConfig base,
                           const AblationFlags& flags, std::ostream* log = nullptr,
                           std::vector<TrainResult>* results = nullptr) {
  for (SegmentKind seg : segments) {
    TrainConfig cfg = base;
    cfg.segment = seg;
    cfg.ablations = flags;
    cfg.seed = Rng::derive(base.seed, 0x5e9, static_cast<std::uint64_t>(seg)).next();
    TrainResult r = train(corpus, b.featurizer, cfg, b.encoder, log);
    b.put(r.model);
    if (results) results->push_back(std::move(r));
  }
}

// ---------------------------------------------------------------------------
// Gradient suite: the full embed -> encoder -> MLM + cloze loss in double
// precision against central differences.

struct GradientCase {
  std::string name;
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t coords_checked = 0;
  int seq_len = 0;
};

namespace detail {

// One relational row of three single-word cells, giving an 8-token DataRow
// sequence with a cloze cell and an MLM target.
inline Table gradient_fixture() {
  Table t;
  t.source_id = "grad";
  t.hmd = HeaderTree::flat({"drug", "os", "site"});
  Cell os;
  os.kind = CellKind::kNumber;
  os.number = decimal_from_string("15");
  os.text = "15 months";
  os.unit = "months";
  t.data = {{Cell::string("folfox"), os, Cell::string("colon")}};
  return t;
}

}  // namespace detail

inline GradientCase gradient_case(const std::string& name, MaskMode mode, const AblationFlags& flags,
                                  std::uint64_t seed, const GradCheckOptions& opt = {}) {
  const Table t = detail::gradient_fixture();
  Featurizer fz;
  fz.vocab = build_vocabulary({t});
  EncoderConfig ecfg;
  ecfg.hidden = 12;
  ecfg.layers = 2;
  ecfg.heads = 2;
  ecfg.dropout = 0.0;
  ecfg.mask_mode = mode;
  EmbeddingShape shape;
  shape.vocab = fz.vocab.size();
  shape.hidden = ecfg.hidden;
  shape.positions = 8;
  shape.cell_positions = 8;

  auto seqs = build_sequences(t, SegmentKind::kDataRow, fz);
  TokenSequence seq = apply_ablation(seqs.at(0), flags);

  SegmentModel<double> m(SegmentKind::kDataRow, shape, ecfg, flags);
  Rng rng = Rng::derive(seed, 1);
  m.init(rng, 0.5);  // large weights keep gradients away from the floor
  TrainConfig tc;
  tc.clc_cells_per_seq = 1;
  tc.clc_candidates = 3;
  tc.mlm_rate = 0.5;
  Rng irng = Rng::derive(seed, 2);
  TrainingInstance inst = make_training_instance(seq, tc, shape.vocab, irng);
  const LossWeights lw{1.0, 1.0, tc.clc_temperature};

  SegmentModel<double> g = m.zeros_like();
  forward_backward<double>(m, inst, lw, nullptr, &g);
  auto loss = [&] {
    const LossValue v = forward_backward<double>(m, inst, lw, nullptr, nullptr);
    return lw.mlm * v.mlm + lw.clc * v.clc;
  };
  GradCheckOptions o = opt;
  o.seed = seed;
  const GradCheckResult r = grad_check(m, g, loss, o);
  return {name, r.max_rel_error, r.worst_tensor, r.coords_checked, seq.size()};
}

inline std::vector<GradientCase> gradient_suite(std::uint64_t seed = 0, const GradCheckOptions& opt = {}) {
  AblationFlags all;
  all.no_visibility = all.no_type = all.no_units_nesting = all.no_bicoords = true;
  return {gradient_case("additive", MaskMode::kAdditive, {}, seed, opt),
          gradient_case("renormalized", MaskMode::kMultiplicativeRenorm, {}, seed, opt),
          gradient_case("additive_ablated", MaskMode::kAdditive, all, seed, opt)};
}

}  // namespace tabbin

#endif  // TABBIN_PIPELINE_HPP_
