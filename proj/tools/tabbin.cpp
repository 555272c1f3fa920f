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

// tabbin command-line tool.

#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tabbin/composites.hpp"
#include "tabbin/corpus.hpp"
#include "tabbin/eval.hpp"
#include "tabbin/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tabbin;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
};

RunConfig resolve(const std::string& command, const Globals& g) {
  RunConfig r;
  r.command = command;
  if (!g.config.empty()) {
    json j;
    try {
      j = json::parse(read_file(g.config));
    } catch (const json::parse_error& e) {
      throw ConfigError(g.config + ": " + e.what());
    }
    apply_config(r, j);
    if (j.contains("corpus")) r.extra["corpus_spec"] = j["corpus"];
  }
  if (g.seed) r.seed = *g.seed;
  r.train.seed = r.seed;
  r.eval.seed = r.seed;
  return r;
}

void emit(const json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << "\n";
  } else {
    write_file_atomic(path, j.dump(2) + "\n");
  }
}

AblationFlags flags_from(const std::vector<std::string>& drops) {
  AblationFlags f;
  for (const auto& d : drops) {
    if (d == "visibility") f.no_visibility = true;
    else if (d == "type") f.no_type = true;
    else if (d == "units") f.no_units_nesting = true;
    else if (d == "coords") f.no_bicoords = true;
    else throw UsageError("unknown ablation '" + d + "'");
  }
  return f;
}

std::vector<SegmentKind> segments_from(const std::string& s) {
  if (s == "all") return {kAllSegments.begin(), kAllSegments.end()};
  return {segment_from_string(s)};
}

CorpusFiles load_corpus(const std::string& dir) {
  CorpusFiles c = read_corpus(dir);
  if (c.tables.empty()) throw NoSequencesError("corpus " + dir + " has no tables");
  return c;
}

// ---------------------------------------------------------------------------

int cmd_ingest(const Globals& g, const std::vector<std::string>& inputs) {
  RunConfig rc = resolve("ingest", g);
  const fs::path out = g.out.empty() ? fs::path("corpus") : fs::path(g.out);
  rc.paths = {{"inputs", inputs}, {"out", out.string()}};
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      const fs::path dir = fs::is_directory(fs::path(in) / "tables") ? fs::path(in) / "tables" : fs::path(in);
      for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
      }
    } else if (fs::is_regular_file(in)) {
      files.push_back(in);
    } else {
      throw IoError("no such input " + in);
    }
  }
  std::sort(files.begin(), files.end());
  int relational = 0, nested = 0;
  fs::create_directories(out / "tables");
  for (const auto& f : files) {
    Table t;
    try {
      t = parse_table(read_file(f));
    } catch (const ValidationError& e) {
      throw SchemaError(f.string() + ": " + e.what());
    }
    if (t.source_id.empty()) t.source_id = f.stem().string();
    relational += is_relational(t);
    for (const auto& row : t.data) {
      for (const auto& c : row) nested += c.kind == CellKind::kNested;
    }
    write_file_atomic(out / "tables" / (t.source_id + ".json"), serialize_table(t));
  }
  json summary{{"tables", files.size()}, {"relational", relational}, {"nested_cells", nested},
               {"run", to_json(rc)}};
  write_file_atomic(out / "ingest.json", summary.dump(2));
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_gen(const Globals& g, const std::string& spec_path, int tables, int topics) {
  RunConfig rc = resolve("gen", g);
  CorpusSpec spec;
  if (rc.extra.contains("corpus_spec")) spec = corpus_spec_from_json(rc.extra["corpus_spec"]);
  if (!spec_path.empty()) spec = corpus_spec_from_json(json::parse(read_file(spec_path)), spec);
  if (tables > 0) spec.n_tables = tables;
  if (topics > 0) spec = corpus_spec_from_json(json{{"n_topics", topics}}, spec);
  if (g.seed) spec.seed = *g.seed;
  spec.validate();
  const fs::path out = g.out.empty() ? fs::path("corpus") : fs::path(g.out);
  rc.paths = {{"spec", spec_path}, {"out", out.string()}};
  const GeneratedCorpus c = generate_corpus(spec);
  write_corpus(out, c, spec, to_json(rc));
  int rel = 0;
  for (const auto& t : c.tables) rel += is_relational(t);
  std::cout << json{{"tables", c.tables.size()}, {"relational", rel}, {"out", out.string()}}.dump() << "\n";
  return 0;
}

struct PretrainArgs {
  std::string segment = "row";
  std::string corpus = "corpus";
  std::string bundle;
  std::string log;
  std::vector<std::string> drop;
  int steps = 0, batch = 0;
  double lr = 0.0;
  bool fresh = false;
};

int cmd_pretrain(const Globals& g, const PretrainArgs& a) {
  RunConfig rc = resolve("pretrain", g);
  if (a.steps > 0) rc.train.steps = a.steps;
  if (a.batch > 0) rc.train.batch_size = a.batch;
  if (a.lr > 0.0) rc.train.lr = a.lr;
  rc.train.ablations = flags_from(a.drop);
  rc.train.validate();
  const std::string bundle_path = !a.bundle.empty() ? a.bundle : (!g.out.empty() ? g.out : "bundle.tbbn");
  rc.paths = {{"corpus", a.corpus}, {"bundle", bundle_path}, {"log", a.log}};
  const CorpusFiles c = load_corpus(a.corpus);

  ModelBundle b;
  if (!a.fresh && fs::exists(bundle_path)) {
    b = load_bundle(bundle_path);
    if (!(b.encoder == rc.encoder)) throw ConfigError("existing bundle has a different encoder config; use --fresh");
  } else {
    b = empty_bundle(make_featurizer(c.tables, c.types), rc.encoder);
  }
  std::ofstream log_file;
  if (!a.log.empty()) {
    log_file.open(a.log, std::ios::app);
    if (!log_file) throw IoError("cannot open log " + a.log);
  }
  std::vector<TrainResult> results;
  train_segments(b, c.tables, segments_from(a.segment), rc.train, rc.train.ablations,
                 a.log.empty() ? nullptr : &log_file, &results);
  json summary = json::array();
  for (const auto& r : results) {
    const std::string seg(to_string(r.model.segment));
    b.config["runs"][seg] = to_json(rc);
    summary.push_back({{"segment", seg}, {"sequences", r.n_sequences}, {"steps", rc.train.steps},
                       {"initial_mlm_loss", r.initial_mlm_loss}, {"final_mlm_loss", r.final_mlm_loss}});
  }
  save_bundle(b, bundle_path);
  std::cout << json{{"bundle", bundle_path}, {"models", summary}}.dump(2) << "\n";
  return 0;
}

struct EmbedArgs {
  std::string recipe = "colcomp";
  std::string corpus = "corpus";
  std::string bundle = "bundle.tbbn";
  bool strict = false;
};

int cmd_embed(const Globals& g, const EmbedArgs& a) {
  RunConfig rc = resolve("embed", g);
  const std::string prefix = g.out.empty() ? "embeddings" : g.out;
  rc.paths = {{"corpus", a.corpus}, {"bundle", a.bundle}, {"out", prefix}};
  rc.extra["recipe"] = a.recipe;
  const CorpusFiles c = load_corpus(a.corpus);
  const ModelBundle b = load_bundle(a.bundle);
  CompositeOptions opt{!a.strict};
  EmbeddingDump d;
  d.recipe = a.recipe;
  d.hidden = b.encoder.hidden;
  d.config = to_json(rc);
  auto header_of = [](const Table& t, int j) { return t.hmd.node(t.hmd.leaf_node(j + 1)).label; };
  for (const auto& t : c.tables) {
    if (a.recipe == "colcomp") {
      for (int j = 0; j < t.cols(); ++j) d.items.emplace_back(column_id(t, j), column_composite(t, j, b, opt).vector);
    } else if (a.recipe == "tblcomp1" || a.recipe == "tblcomp2") {
      d.items.emplace_back(t.source_id, table_composite(t, b, a.recipe, opt).vector);
    } else if (a.recipe == "numeric" || a.recipe == "range") {
      for (int i = 0; i < t.rows(); ++i) {
        for (int j = 0; j < t.cols(); ++j) {
          const Cell& cell = t.data[i][j];
          const std::string id = t.source_id + "#" + std::to_string(i) + "," + std::to_string(j);
          if (a.recipe == "numeric" && cell.kind == CellKind::kNumber) {
            d.items.emplace_back(id, numeric_composite(header_of(t, j), *cell.number, cell.unit, b).vector);
          } else if (a.recipe == "range" && cell.kind == CellKind::kRange) {
            d.items.emplace_back(
                id, range_composite(header_of(t, j), cell.unit, cell.range->lo, cell.range->hi, b).vector);
          }
        }
      }
    } else {
      throw UsageError("unknown recipe '" + a.recipe + "'");
    }
  }
  write_embedding_dump(d, prefix);
  std::cout << json{{"recipe", a.recipe}, {"count", d.items.size()}, {"out", prefix}}.dump() << "\n";
  return 0;
}

struct EvalArgs {
  std::string task;
  std::string corpus = "corpus";
  std::string bundle = "bundle.tbbn";
  std::string truth;
  std::string recipe;
  int k = 0, exemplars = 0;
  bool no_lsh = false, random_baseline = false, strict = false;
};

GroundTruth load_truth(const std::string& corpus, Task task, const std::string& explicit_path) {
  const fs::path p = !explicit_path.empty() ? fs::path(explicit_path)
                                            : fs::path(corpus) / ("truth_" + std::string(to_string(task)) + ".csv");
  if (!fs::exists(p)) throw IoError("ground truth " + p.string() + " not found");
  return parse_ground_truth_csv(read_file(p));
}

int cmd_eval(const Globals& g, const EvalArgs& a) {
  RunConfig rc = resolve("eval", g);
  const Task task = task_from_string(a.task);
  if (a.k > 0) rc.eval.k = a.k;
  if (a.no_lsh) rc.eval.use_lsh = false;
  if (!a.recipe.empty()) rc.eval.table_recipe = a.recipe;
  if (a.exemplars > 0) rc.eval.exemplars = a.exemplars;
  rc.eval.composite.missing_as_zero = !a.strict;
  rc.paths = {{"corpus", a.corpus}, {"bundle", a.bundle}, {"truth", a.truth}, {"out", g.out}};
  const CorpusFiles c = load_corpus(a.corpus);
  const ModelBundle b = load_bundle(a.bundle);
  const GroundTruth truth = load_truth(a.corpus, task, a.truth);
  const auto pools = build_pools(task, c.tables, b, truth, rc.eval);
  Report r = score_pools(task, pools, truth, rc.eval);
  r.config = to_json(rc);
  json out = to_json(r);
  if (a.random_baseline) {
    Report base = score_pools(task, random_pools(pools, rc.seed), truth, rc.eval);
    out["random_baseline"] = to_json(base)["strata"];
  }
  emit(out, g.out);
  return 0;
}

struct AblateArgs {
  std::string drop;
  std::string corpus = "corpus";
  std::string bundle;
  std::vector<std::string> tasks{"tc", "cc"};
  int steps = 0;
};

int cmd_ablate(const Globals& g, const AblateArgs& a) {
  RunConfig rc = resolve("ablate", g);
  if (a.steps > 0) rc.train.steps = a.steps;
  const AblationFlags flags = flags_from({a.drop});
  rc.paths = {{"corpus", a.corpus}, {"bundle", a.bundle}};
  rc.extra["drop"] = a.drop;
  const CorpusFiles c = load_corpus(a.corpus);
  const std::vector<SegmentKind> segs(kAllSegments.begin(), kAllSegments.end());

  ModelBundle full;
  if (!a.bundle.empty()) {
    full = load_bundle(a.bundle);
  } else {
    full = empty_bundle(make_featurizer(c.tables, c.types), rc.encoder);
    train_segments(full, c.tables, segs, rc.train, {});
  }
  ModelBundle ablated = empty_bundle(full.featurizer, full.encoder);
  train_segments(ablated, c.tables, segs, rc.train, flags);

  static const std::map<std::string, std::string> names{
      {"visibility", "TabBiN1"}, {"type", "TabBiN2"}, {"units", "TabBiN3"}, {"coords", "TabBiN4"}};
  json rows = json::array();
  std::ostringstream table;
  table << std::left << std::setw(6) << "task" << std::setw(10) << "model" << std::right << std::setw(8) << "MAP"
        << std::setw(8) << "MRR" << std::setw(9) << "dMAP" << std::setw(9) << "dMRR" << "\n";
  table << std::fixed << std::setprecision(4);
  for (const auto& ts : a.tasks) {
    const Task task = task_from_string(ts);
    const GroundTruth truth = load_truth(a.corpus, task, "");
    const auto base = run_task(task, c.tables, full, truth, rc.eval).overall();
    const auto abl = run_task(task, c.tables, ablated, truth, rc.eval).overall();
    table << std::left << std::setw(6) << ts << std::setw(10) << "TabBiN" << std::right << std::setw(8) << base.map
          << std::setw(8) << base.mrr << std::setw(9) << "" << std::setw(9) << "" << "\n";
    table << std::left << std::setw(6) << ts << std::setw(10) << names.at(a.drop) << std::right << std::setw(8)
          << abl.map << std::setw(8) << abl.mrr << std::setw(9) << abl.map - base.map << std::setw(9)
          << abl.mrr - base.mrr << "\n";
    rows.push_back({{"task", ts},
                    {"full", {{"map", base.map}, {"mrr", base.mrr}}},
                    {"ablated", {{"name", names.at(a.drop)}, {"map", abl.map}, {"mrr", abl.mrr}}},
                    {"delta_map", abl.map - base.map},
                    {"delta_mrr", abl.mrr - base.mrr}});
  }
  std::cout << table.str();
  if (!g.out.empty()) emit(json{{"rows", rows}, {"config", to_json(rc)}, {"seed", rc.seed}}, g.out);
  return 0;
}

int cmd_gradcheck(const Globals& g) {
  RunConfig rc = resolve("gradcheck", g);
  const auto cases = gradient_suite(rc.seed);
  json out = json::array();
  double worst = 0.0;
  for (const auto& c : cases) {
    worst = std::max(worst, c.max_rel_error);
    out.push_back({{"case", c.name}, {"max_rel_error", c.max_rel_error}, {"worst_tensor", c.worst_tensor},
                   {"coords", c.coords_checked}, {"seq_len", c.seq_len}});
  }
  const bool pass = worst < 1e-4;
  emit(json{{"cases", out}, {"max_rel_error", worst}, {"pass", pass}, {"config", to_json(rc)}, {"seed", rc.seed}},
       g.out);
  return pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tabular embeddings for BiN tables"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random stream");
  app.add_option("--config", g.config, "JSON config file (encoder, train, eval, corpus sections)");
  app.add_option("--out", g.out, "Output path");

  std::vector<std::string> ingest_inputs;
  auto* ingest = app.add_subcommand("ingest", "Validate and normalize tabjson tables");
  ingest->add_option("inputs", ingest_inputs, "Table files or directories")->required();

  std::string spec_path;
  int gen_tables = 0, gen_topics = 0;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic corpus");
  gen->add_option("--spec", spec_path, "Corpus spec JSON");
  gen->add_option("--tables", gen_tables, "Number of tables");
  gen->add_option("--topics", gen_topics, "Number of built-in topics");

  PretrainArgs pa;
  auto* pretrain = app.add_subcommand("pretrain", "Pretrain segment models");
  pretrain->add_option("--segment", pa.segment, "row, col, hmd, vmd or all")
      ->check(CLI::IsMember({"row", "col", "hmd", "vmd", "all"}));
  pretrain->add_option("--corpus", pa.corpus, "Corpus directory");
  pretrain->add_option("--bundle", pa.bundle, "Bundle to create or extend (default --out or bundle.tbbn)");
  pretrain->add_option("--steps", pa.steps, "Training steps");
  pretrain->add_option("--batch", pa.batch, "Batch size");
  pretrain->add_option("--lr", pa.lr, "Learning rate");
  pretrain->add_option("--drop", pa.drop, "Ablations: visibility, type, units, coords")
      ->check(CLI::IsMember({"visibility", "type", "units", "coords"}));
  pretrain->add_option("--log", pa.log, "JSONL training log");
  pretrain->add_flag("--fresh", pa.fresh, "Ignore an existing bundle");

  EmbedArgs ea;
  auto* embed = app.add_subcommand("embed", "Write composite embeddings");
  embed->add_option("--recipe", ea.recipe, "Composite recipe")
      ->check(CLI::IsMember({"colcomp", "tblcomp1", "tblcomp2", "numeric", "range"}));
  embed->add_option("--corpus", ea.corpus, "Corpus directory");
  embed->add_option("--bundle", ea.bundle, "Model bundle");
  embed->add_flag("--strict", ea.strict, "Fail when a segment model is missing");

  EvalArgs va;
  auto* eval = app.add_subcommand("eval", "Run a clustering task and print the report");
  eval->add_option("--task", va.task, "cc, tc or ec")->required()->check(CLI::IsMember({"cc", "tc", "ec"}));
  eval->add_option("--corpus", va.corpus, "Corpus directory");
  eval->add_option("--bundle", va.bundle, "Model bundle");
  eval->add_option("--truth", va.truth, "Ground-truth CSV (default corpus/truth_<task>.csv)");
  eval->add_option("--k", va.k, "Cutoff");
  eval->add_option("--recipe", va.recipe, "Table recipe")->check(CLI::IsMember({"tblcomp1", "tblcomp2"}));
  eval->add_option("--exemplars", va.exemplars, "Exemplars per table query");
  eval->add_flag("--no-lsh", va.no_lsh, "Exhaustive column candidates");
  eval->add_flag("--random-baseline", va.random_baseline, "Also score random vectors");
  eval->add_flag("--strict", va.strict, "Fail when a segment model is missing");

  AblateArgs aa;
  auto* ablate = app.add_subcommand("ablate", "Retrain without one component and compare");
  ablate->add_option("--drop", aa.drop, "visibility, type, units or coords")
      ->required()
      ->check(CLI::IsMember({"visibility", "type", "units", "coords"}));
  ablate->add_option("--corpus", aa.corpus, "Corpus directory");
  ablate->add_option("--bundle", aa.bundle, "Full-model bundle (trained when omitted)");
  ablate->add_option("--tasks", aa.tasks, "Tasks to compare")->check(CLI::IsMember({"cc", "tc", "ec"}));
  ablate->add_option("--steps", aa.steps, "Training steps per segment");

  auto* gradcheck = app.add_subcommand("gradcheck", "Check analytic gradients against finite differences");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*ingest) return cmd_ingest(g, ingest_inputs);
    if (*gen) return cmd_gen(g, spec_path, gen_tables, gen_topics);
    if (*pretrain) return cmd_pretrain(g, pa);
    if (*embed) return cmd_embed(g, ea);
    if (*eval) return cmd_eval(g, va);
    if (*ablate) return cmd_ablate(g, aa);
    if (*gradcheck) return cmd_gradcheck(g);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
