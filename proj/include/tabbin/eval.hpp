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

// Retrieval-style evaluation: cosine ranking, LSH blocking, top-k and
// centroid clusters, AP@k / MAP / MRR, and the column, table and entity
// clustering tasks.

#ifndef TABBIN_EVAL_HPP_
#define TABBIN_EVAL_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabbin/bundle.hpp"
#include "tabbin/composites.hpp"
#include "tabbin/errors.hpp"
#include "tabbin/table.hpp"

namespace tabbin {

using GroundTruth = std::map<std::string, std::string>;
using VectorPool = std::vector<std::pair<std::string, Eigen::VectorXd>>;

inline double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw ShapeError("cosine of vectors with different lengths");
  const double aa = a.dot(a), bb = b.dot(b);
  if (aa == 0.0 || bb == 0.0) throw ZeroVectorError("cosine of a zero vector");
  // one square root keeps cos(x, x) == 1 exactly
  return std::clamp(a.dot(b) / std::sqrt(aa * bb), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Ranked lists and metrics.

struct RankedEntry {
  std::string id;
  double score = 0.0;
};

struct RankedList {
  std::string query;
  std::vector<RankedEntry> entries;
  int k = 20;
  // Items that were eligible for ranking. Sets the AP denominator; when
  // empty the entries themselves are used.
  std::vector<std::string> universe;
};

namespace detail {

inline RankedList rank_by(const std::string& query, const Eigen::VectorXd& qv, const VectorPool& pool,
                          int k, const std::set<std::string>& exclude,
                          const std::set<std::string>* candidates = nullptr) {
  RankedList out;
  out.query = query;
  out.k = k;
  std::vector<RankedEntry> all;
  for (const auto& [id, v] : pool) {
    if (exclude.count(id)) continue;
    out.universe.push_back(id);
    if (candidates && !candidates->count(id)) continue;
    all.push_back({id, cosine(qv, v)});
  }
  std::sort(all.begin(), all.end(), [](const RankedEntry& a, const RankedEntry& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });
  if (static_cast<int>(all.size()) > k) all.resize(k);
  out.entries = std::move(all);
  return out;
}

}  // namespace detail

// The k items most similar to `query` (which is excluded), ties broken by
// ascending id.
inline RankedList topk_cluster(const std::string& query, const VectorPool& pool, int k = 20,
                               const std::set<std::string>* candidates = nullptr) {
  auto it = std::find_if(pool.begin(), pool.end(), [&](const auto& p) { return p.first == query; });
  if (it == pool.end()) throw ValueError("query '" + query + "' is not in the pool");
  return detail::rank_by(query, it->second, pool, k, {query}, candidates);
}

// Ranks the pool against the mean of the exemplars. Items in `exclude` (the
// exemplars themselves, typically) are left out.
inline RankedList centroid_cluster(const std::vector<Eigen::VectorXd>& exemplars, const VectorPool& pool,
                                   int k = 20, const std::string& query = "centroid",
                                   const std::set<std::string>& exclude = {}) {
  if (exemplars.empty()) throw EmptyExemplarError("centroid of no exemplars");
  Eigen::VectorXd c = Eigen::VectorXd::Zero(exemplars.front().size());
  for (const auto& e : exemplars) c += e;
  c /= static_cast<double>(exemplars.size());
  if (c.norm() == 0.0) throw ZeroVectorError("exemplar centroid is the zero vector");
  return detail::rank_by(query, c, pool, k, exclude);
}

inline const std::string& label_of(const GroundTruth& truth, const std::string& id) {
  auto it = truth.find(id);
  if (it == truth.end()) throw ValueError("no ground-truth label for '" + id + "'");
  return it->second;
}

// Sum of precision@i over relevant positions i <= k, divided by
// min(k, number of relevant items available).
inline double ap_at_k(const RankedList& list, const GroundTruth& truth, int k = 20) {
  const std::string& label = label_of(truth, list.query);
  int total_relevant = 0;
  if (!list.universe.empty()) {
    for (const auto& id : list.universe) total_relevant += label_of(truth, id) == label;
  } else {
    for (const auto& e : list.entries) total_relevant += label_of(truth, e.id) == label;
  }
  if (total_relevant == 0) throw NoRelevantError("no relevant items for query '" + list.query + "'");
  double sum = 0.0;
  int hits = 0;
  const int n = std::min<int>(k, static_cast<int>(list.entries.size()));
  for (int i = 0; i < n; ++i) {
    if (label_of(truth, list.entries[i].id) == label) {
      ++hits;
      sum += static_cast<double>(hits) / (i + 1);
    }
  }
  return sum / std::min(k, total_relevant);
}

inline double reciprocal_rank(const RankedList& list, const GroundTruth& truth, int k = 20) {
  const std::string& label = label_of(truth, list.query);
  const int n = std::min<int>(k, static_cast<int>(list.entries.size()));
  for (int i = 0; i < n; ++i) {
    if (label_of(truth, list.entries[i].id) == label) return 1.0 / (i + 1);
  }
  return 0.0;
}

struct MetricSummary {
  double map = 0.0;
  double mrr = 0.0;
  int n_queries = 0;       // lists scored
  int n_no_relevant = 0;   // excluded from MAP
};

// MAP over queries with at least one relevant item; MRR over all queries.
inline MetricSummary map_mrr(const std::vector<RankedList>& lists, const GroundTruth& truth, int k = 20) {
  MetricSummary s;
  s.n_queries = static_cast<int>(lists.size());
  int scored = 0;
  for (const auto& l : lists) {
    s.mrr += reciprocal_rank(l, truth, k);
    try {
      s.map += ap_at_k(l, truth, k);
      ++scored;
    } catch (const NoRelevantError&) {
      ++s.n_no_relevant;
    }
  }
  if (scored) s.map /= scored;
  if (!lists.empty()) s.mrr /= static_cast<double>(lists.size());
  return s;
}

// ---------------------------------------------------------------------------
// LSH blocking with random hyperplanes.

struct LshParams {
  int planes = 64;
  int bands = 16;
  int rows = 4;
};

// Probability that a pair at angle theta shares at least one band.
inline double lsh_collision_probability(double theta, int bands, int rows) {
  const double p = 1.0 - theta / M_PI;
  return 1.0 - std::pow(1.0 - std::pow(p, rows), bands);
}

namespace detail {

inline std::set<std::pair<int, int>> lsh_index_pairs(const std::vector<const Eigen::VectorXd*>& vecs,
                                                     const LshParams& p, std::uint64_t seed) {
  if (p.planes != p.bands * p.rows || p.planes <= 0) {
    throw ConfigError("LSH needs planes == bands * rows");
  }
  if (p.rows > 64) throw ConfigError("LSH rows per band must be <= 64");
  std::set<std::pair<int, int>> out;
  if (vecs.empty()) return out;
  const Eigen::Index dim = vecs.front()->size();
  Rng rng(seed);
  Eigen::MatrixXd planes(p.planes, dim);
  for (Eigen::Index i = 0; i < planes.size(); ++i) planes.data()[i] = rng.normal();
  std::map<std::pair<int, std::uint64_t>, std::vector<int>> buckets;
  for (int v = 0; v < static_cast<int>(vecs.size()); ++v) {
    if (vecs[v]->norm() == 0.0) throw ZeroVectorError("LSH of a zero vector");
    const Eigen::VectorXd proj = planes * *vecs[v];
    for (int b = 0; b < p.bands; ++b) {
      std::uint64_t key = 0;
      for (int r = 0; r < p.rows; ++r) key = (key << 1) | (proj(b * p.rows + r) >= 0.0 ? 1u : 0u);
      buckets[{b, key}].push_back(v);
    }
  }
  for (const auto& [_, members] : buckets) {
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t c = a + 1; c < members.size(); ++c) out.emplace(members[a], members[c]);
    }
  }
  return out;
}

}  // namespace detail

// Candidate pairs (lexicographically ordered ids) sharing at least one band.
inline std::set<std::pair<std::string, std::string>> lsh_block(const VectorPool& vectors,
                                                               const LshParams& p, std::uint64_t seed) {
  std::vector<const Eigen::VectorXd*> vecs;
  for (const auto& [_, v] : vectors) vecs.push_back(&v);
  std::set<std::pair<std::string, std::string>> out;
  for (const auto& [a, b] : detail::lsh_index_pairs(vecs, p, seed)) {
    const auto& x = vectors[a].first;
    const auto& y = vectors[b].first;
    out.emplace(std::min(x, y), std::max(x, y));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ground truth files.

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

}  // namespace detail

inline GroundTruth parse_ground_truth_csv(const std::string& text) {
  GroundTruth truth;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = detail::split_csv_line(line);
    if (lineno == 1 && f.size() == 2 && f[0] == "item_id" && f[1] == "cluster_label") continue;
    if (f.size() != 2) throw SchemaError("ground truth line " + std::to_string(lineno) + " needs 2 fields");
    truth[f[0]] = f[1];
  }
  return truth;
}

inline std::string ground_truth_csv(const GroundTruth& truth) {
  std::string out = "item_id,cluster_label\n";
  for (const auto& [id, label] : truth) out += detail::csv_field(id) + "," + detail::csv_field(label) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Tasks.

enum class Task { kCC, kTC, kEC };

inline std::string_view to_string(Task t) {
  switch (t) {
    case Task::kCC: return "cc";
    case Task::kTC: return "tc";
    case Task::kEC: return "ec";
  }
  return "?";
}

inline Task task_from_string(std::string_view s) {
  if (s == "cc") return Task::kCC;
  if (s == "tc") return Task::kTC;
  if (s == "ec") return Task::kEC;
  throw UsageError("unknown task '" + std::string(s) + "' (expected cc, tc or ec)");
}

struct EvalOptions {
  int k = 20;
  bool use_lsh = true;  // column clustering only
  LshParams lsh;
  std::uint64_t seed = 0;
  std::string table_recipe = "tblcomp1";
  int exemplars = 1;  // per table-clustering query, including the query itself
  CompositeOptions composite;
};

inline nlohmann::json to_json(const EvalOptions& o) {
  return {{"k", o.k},
          {"use_lsh", o.use_lsh},
          {"lsh", {{"planes", o.lsh.planes}, {"bands", o.lsh.bands}, {"rows", o.lsh.rows}}},
          {"seed", o.seed},
          {"table_recipe", o.table_recipe},
          {"exemplars", o.exemplars},
          {"missing_as_zero", o.composite.missing_as_zero}};
}

struct ItemPool {
  std::string name;  // stratum
  VectorPool items;
};

struct StratumReport {
  std::string name;
  double map = 0.0;
  double mrr = 0.0;
  int n_queries = 0;
  int n_no_relevant = 0;
  int n_items = 0;
};

struct Report {
  std::string task;
  std::vector<StratumReport> strata;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;

  // Query-weighted MAP / MRR over strata.
  MetricSummary overall() const {
    MetricSummary s;
    int scored = 0;
    for (const auto& st : strata) {
      const int q = st.n_queries - st.n_no_relevant;
      s.map += st.map * q;
      s.mrr += st.mrr * st.n_queries;
      scored += q;
      s.n_queries += st.n_queries;
      s.n_no_relevant += st.n_no_relevant;
    }
    if (scored) s.map /= scored;
    if (s.n_queries) s.mrr /= s.n_queries;
    return s;
  }
};

inline nlohmann::json to_json(const Report& r) {
  nlohmann::json strata = nlohmann::json::array();
  for (const auto& s : r.strata) {
    strata.push_back({{"name", s.name}, {"map", s.map}, {"mrr", s.mrr}, {"n_queries", s.n_queries},
                      {"n_no_relevant", s.n_no_relevant}, {"n_items", s.n_items}});
  }
  return {{"task", r.task}, {"strata", strata}, {"config", r.config}, {"seed", r.seed}};
}

// Majority content class of a column: "range", "numerical" or "textual".
inline std::string column_stratum(const Table& t, int j, const Featurizer& fz) {
  int range = 0, numeric = 0, text = 0;
  const int range_type = fz.types.index_of("range");
  for (int i = 0; i < t.rows(); ++i) {
    const Cell& c = t.data[i][j];
    if (c.kind == CellKind::kEmpty) continue;
    if (c.kind == CellKind::kRange || (c.kind == CellKind::kString && infer_type(c, fz.types) == range_type)) {
      ++range;
    } else if (fz.is_numeric_cell(c)) {
      ++numeric;
    } else {
      ++text;
    }
  }
  if (range > numeric && range > text) return "range";
  if (numeric > text) return "numerical";
  return "textual";
}

inline std::string column_id(const Table& t, int j) { return t.source_id + "#" + std::to_string(j); }

namespace detail {

inline void push_nonzero(VectorPool& pool, std::string id, Eigen::VectorXd v) {
  if (v.norm() > 0.0) pool.emplace_back(std::move(id), std::move(v));
}

}  // namespace detail

// Embeds every evaluable item of the task, grouped into strata.
inline std::vector<ItemPool> build_pools(Task task, const std::vector<Table>& corpus, const ModelBundle& b,
                                         const GroundTruth& truth, const EvalOptions& opt) {
  std::vector<ItemPool> pools;
  switch (task) {
    case Task::kTC: {
      ItemPool p{"all", {}};
      for (const auto& t : corpus) {
        if (!truth.count(t.source_id)) continue;
        detail::push_nonzero(p.items, t.source_id,
                             table_composite(t, b, opt.table_recipe, opt.composite).vector);
      }
      pools.push_back(std::move(p));
      break;
    }
    case Task::kCC: {
      std::map<std::string, ItemPool> strata;
      for (const char* s : {"textual", "numerical", "range"}) strata[s] = ItemPool{s, {}};
      for (const auto& t : corpus) {
        for (int j = 0; j < t.cols(); ++j) {
          const std::string id = column_id(t, j);
          if (!truth.count(id)) continue;
          detail::push_nonzero(strata[column_stratum(t, j, b.featurizer)].items, id,
                               column_composite(t, j, b, opt.composite).vector);
        }
      }
      for (const char* s : {"textual", "numerical", "range"}) pools.push_back(std::move(strata[s]));
      break;
    }
    case Task::kEC: {
      const auto& m = b.model(SegmentKind::kDataCol);
      std::map<std::string, std::pair<Eigen::VectorXd, int>> acc;
      for (const auto& t : corpus) {
        std::set<std::pair<int, int>> hits;
        for (int i = 0; i < t.rows(); ++i) {
          for (int j = 0; j < t.cols(); ++j) {
            const Cell& c = t.data[i][j];
            if (c.kind == CellKind::kString && truth.count(c.text)) hits.emplace(i, j);
          }
        }
        if (hits.empty()) continue;
        for (const auto& s : build_sequences(t, SegmentKind::kDataCol, b.featurizer)) {
          std::map<std::pair<int, int>, std::vector<int>> rows;
          for (int i = 0; i < s.size(); ++i) {
            const auto& sl = s.slots[i];
            if (sl.role != SlotRole::kContent) continue;
            const auto& ref = s.cells[sl.cell];
            if (hits.count({ref.row, ref.col})) rows[{ref.row, ref.col}].push_back(i);
          }
          if (rows.empty()) continue;
          const Matrix<float> hidden = encode_sequence(m, s);
          for (const auto& [cell, r] : rows) {
            const std::string& value = t.data[cell.first][cell.second].text;
            auto& slot = acc[value];
            if (slot.second == 0) slot.first = Eigen::VectorXd::Zero(b.encoder.hidden);
            slot.first += pool(hidden, r).transpose().cast<double>();
            slot.second += 1;
          }
        }
      }
      ItemPool p{"all", {}};
      for (auto& [id, v] : acc) detail::push_nonzero(p.items, id, v.first / v.second);
      pools.push_back(std::move(p));
      break;
    }
  }
  return pools;
}

// Same items, i.i.d. standard normal vectors of the same width.
inline std::vector<ItemPool> random_pools(const std::vector<ItemPool>& like, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 0x5eed);
  std::vector<ItemPool> out;
  for (const auto& p : like) {
    ItemPool q{p.name, {}};
    for (const auto& [id, v] : p.items) {
      Eigen::VectorXd r(v.size());
      for (Eigen::Index i = 0; i < r.size(); ++i) r(i) = rng.normal();
      q.items.emplace_back(id, std::move(r));
    }
    out.push_back(std::move(q));
  }
  return out;
}

inline std::vector<RankedList> rank_pool(Task task, const ItemPool& pool, const GroundTruth& truth,
                                         const EvalOptions& opt) {
  std::vector<RankedList> lists;
  const auto& items = pool.items;
  if (items.size() < 2) return lists;
  if (task == Task::kTC) {
    std::map<std::string, std::vector<int>> by_label;
    for (int i = 0; i < static_cast<int>(items.size()); ++i) by_label[label_of(truth, items[i].first)].push_back(i);
    for (int q = 0; q < static_cast<int>(items.size()); ++q) {
      std::vector<Eigen::VectorXd> ex{items[q].second};
      std::set<std::string> exclude{items[q].first};
      if (opt.exemplars > 1) {
        std::vector<int> same;
        for (int i : by_label[label_of(truth, items[q].first)]) {
          if (i != q) same.push_back(i);
        }
        Rng rng = Rng::derive(opt.seed, 0x7c, static_cast<std::uint64_t>(q));
        rng.shuffle(same);
        for (int e = 0; e < opt.exemplars - 1 && e < static_cast<int>(same.size()); ++e) {
          ex.push_back(items[same[e]].second);
          exclude.insert(items[same[e]].first);
        }
      }
      lists.push_back(centroid_cluster(ex, items, opt.k, items[q].first, exclude));
    }
    return lists;
  }
  std::vector<std::set<std::string>> candidates;
  if (task == Task::kCC && opt.use_lsh) {
    std::vector<const Eigen::VectorXd*> vecs;
    for (const auto& [_, v] : items) vecs.push_back(&v);
    candidates.resize(items.size());
    for (const auto& [a, c] : detail::lsh_index_pairs(vecs, opt.lsh, opt.seed)) {
      candidates[a].insert(items[c].first);
      candidates[c].insert(items[a].first);
    }
  }
  for (std::size_t q = 0; q < items.size(); ++q) {
    lists.push_back(topk_cluster(items[q].first, items, opt.k, candidates.empty() ? nullptr : &candidates[q]));
  }
  return lists;
}

inline Report score_pools(Task task, const std::vector<ItemPool>& pools, const GroundTruth& truth,
                          const EvalOptions& opt) {
  Report r;
  r.task = std::string(to_string(task));
  r.seed = opt.seed;
  r.config = to_json(opt);
  for (const auto& p : pools) {
    const auto lists = rank_pool(task, p, truth, opt);
    const auto s = map_mrr(lists, truth, opt.k);
    r.strata.push_back({p.name, s.map, s.mrr, s.n_queries, s.n_no_relevant, static_cast<int>(p.items.size())});
  }
  return r;
}

inline Report run_task(Task task, const std::vector<Table>& corpus, const ModelBundle& b,
                       const GroundTruth& truth, const EvalOptions& opt) {
  return score_pools(task, build_pools(task, corpus, b, truth, opt), truth, opt);
}

}  // namespace tabbin

#endif  // TABBIN_EVAL_HPP_
