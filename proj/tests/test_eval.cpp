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

#include <algorithm>
#include <cmath>

#include "fixtures.hpp"
#include "tabbin/eval.hpp"
#include "tabbin/pipeline.hpp"

namespace tabbin {
namespace {

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

VectorPool random_pool(int n, int dim, Rng& rng, const std::string& prefix = "i") {
  VectorPool p;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd v(dim);
    for (auto& x : v) x = rng.normal();
    char id[16];
    std::snprintf(id, sizeof id, "%s%03d", prefix.c_str(), i);
    p.emplace_back(id, v);
  }
  return p;
}

RankedList planted(const std::string& query, const std::vector<std::string>& ids) {
  RankedList l;
  l.query = query;
  for (const auto& id : ids) l.entries.push_back({id, 0.0});
  return l;
}

TEST(Cosine, KnownValues) {
  EXPECT_EQ(cosine(vec({1, 0}), vec({1, 0})), 1.0);
  EXPECT_EQ(cosine(vec({1, 0}), vec({0, 1})), 0.0);
  EXPECT_NEAR(cosine(vec({1, 2, 3}), vec({4, 5, 6})), 32.0 / std::sqrt(14.0 * 77.0), 1e-15);
  EXPECT_NEAR(cosine(vec({1, 2, 3}), vec({4, 5, 6})), 0.9746318, 1e-6);
  EXPECT_THROW(cosine(vec({0, 0}), vec({1, 0})), ZeroVectorError);
  EXPECT_THROW(cosine(vec({1}), vec({1, 0})), ShapeError);
}

TEST(Metrics, HandComputedAveragePrecision) {
  const GroundTruth truth{{"q", "A"}, {"a", "A"}, {"b", "B"}, {"c", "A"}};
  const auto l = planted("q", {"a", "b", "c"});
  EXPECT_DOUBLE_EQ(ap_at_k(l, truth, 3), (1.0 / 1 + 2.0 / 3) / 2);
  EXPECT_NEAR(ap_at_k(l, truth, 3), 0.8333, 5e-5);
  EXPECT_EQ(ap_at_k(planted("q", {"a", "c"}), truth, 3), 1.0);
  auto none = planted("q", {"b"});
  none.universe = {"a", "b", "c"};
  EXPECT_EQ(ap_at_k(none, truth, 1), 0.0);
  EXPECT_THROW(ap_at_k(planted("b", {"a", "c"}), truth, 3), NoRelevantError);
}

TEST(Metrics, PlantedReciprocalRanks) {
  GroundTruth truth;
  std::vector<RankedList> lists;
  // first relevant at ranks 1, 2, 4, none, 1
  const std::vector<int> first{1, 2, 4, 0, 1};
  for (int q = 0; q < 5; ++q) {
    const std::string qid = "q" + std::to_string(q);
    truth[qid] = "L" + std::to_string(q);
    std::vector<std::string> ids;
    for (int r = 1; r <= 5; ++r) {
      const std::string id = qid + "_" + std::to_string(r);
      truth[id] = r == first[q] ? truth[qid] : "noise";
      ids.push_back(id);
    }
    lists.push_back(planted(qid, ids));
  }
  const auto s = map_mrr(lists, truth, 20);
  EXPECT_DOUBLE_EQ(s.mrr, (1 + 0.5 + 0.25 + 0 + 1) / 5.0);
  EXPECT_DOUBLE_EQ(s.mrr, 0.55);
  EXPECT_EQ(s.n_queries, 5);
  EXPECT_EQ(s.n_no_relevant, 1);
  EXPECT_DOUBLE_EQ(s.map, (1 + 0.5 + 0.25 + 1) / 4.0);

  EXPECT_DOUBLE_EQ(map_mrr({lists[1]}, truth).mrr, 0.5);
  EXPECT_DOUBLE_EQ(map_mrr({lists[0], lists[4]}, truth).mrr, 1.0);
}

TEST(Metrics, AlwaysWithinUnitInterval) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto pool = random_pool(25, 4, rng);
    GroundTruth truth;
    for (const auto& [id, _] : pool) truth[id] = "L" + std::to_string(rng.below(4));
    std::vector<RankedList> lists;
    for (const auto& [id, _] : pool) lists.push_back(topk_cluster(id, pool, 1 + static_cast<int>(rng.below(20))));
    const auto s = map_mrr(lists, truth, 20);
    EXPECT_GE(s.map, 0.0);
    EXPECT_LE(s.map, 1.0);
    EXPECT_GE(s.mrr, 0.0);
    EXPECT_LE(s.mrr, 1.0);
  }
}

TEST(TopK, MatchesExhaustiveSort) {
  Rng rng(2);
  auto pool = random_pool(30, 6, rng);
  pool[7].second = pool[3].second;  // exact tie with a lower id
  pool[20].second = pool[3].second * 2.0;
  for (const auto& [q, qv] : pool) {
    std::vector<std::pair<double, std::string>> all;
    for (const auto& [id, v] : pool) {
      if (id != q) all.emplace_back(-cosine(qv, v), id);
    }
    std::sort(all.begin(), all.end());
    const auto got = topk_cluster(q, pool, 20);
    ASSERT_EQ(got.entries.size(), 20u);
    for (int i = 0; i < 20; ++i) {
      EXPECT_EQ(got.entries[i].id, all[i].second) << q << " rank " << i;
      EXPECT_EQ(got.entries[i].score, -all[i].first);
    }
  }
}

TEST(TopK, DuplicateFirstAndTruncation) {
  const VectorPool pool{{"q", vec({1, 2})}, {"x", vec({-1, 0.5})}, {"dup", vec({1, 2})}};
  const auto l = topk_cluster("q", pool, 20);
  ASSERT_EQ(l.entries.size(), 2u);
  EXPECT_EQ(l.entries[0].id, "dup");
  EXPECT_EQ(l.entries[0].score, 1.0);
  for (const auto& e : l.entries) EXPECT_NE(e.id, "q");
  EXPECT_THROW(topk_cluster("missing", pool), ValueError);
}

TEST(TopK, ScaleInvariantOrdering) {
  Rng rng(3);
  const auto pool = random_pool(40, 5, rng);
  VectorPool scaled;
  for (const auto& [id, v] : pool) scaled.emplace_back(id, v * (0.1 + 10 * rng.uniform()));
  for (const auto& [q, _] : pool) {
    const auto a = topk_cluster(q, pool), b = topk_cluster(q, scaled);
    for (std::size_t i = 0; i < a.entries.size(); ++i) EXPECT_EQ(a.entries[i].id, b.entries[i].id);
  }
}

TEST(Centroid, SingleExemplarEqualsTopK) {
  Rng rng(4);
  const auto pool = random_pool(20, 5, rng);
  const auto c = centroid_cluster({pool[5].second}, pool, 20, pool[5].first, {pool[5].first});
  const auto t = topk_cluster(pool[5].first, pool, 20);
  ASSERT_EQ(c.entries.size(), t.entries.size());
  for (std::size_t i = 0; i < c.entries.size(); ++i) EXPECT_EQ(c.entries[i].id, t.entries[i].id);
}

TEST(Centroid, MeanThenSortOracle) {
  Rng rng(5);
  const auto pool = random_pool(20, 5, rng);
  const std::vector<Eigen::VectorXd> ex{pool[1].second, pool[2].second, pool[9].second};
  const Eigen::VectorXd mean = (pool[1].second + pool[2].second + pool[9].second) / 3.0;
  std::vector<std::pair<double, std::string>> all;
  for (const auto& [id, v] : pool) all.emplace_back(-mean.dot(v) / (mean.norm() * v.norm()), id);
  std::sort(all.begin(), all.end());
  const auto got = centroid_cluster(ex, pool, 10);
  ASSERT_EQ(got.entries.size(), 10u);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(got.entries[i].id, all[i].second);
}

TEST(Centroid, Degenerate) {
  const VectorPool pool{{"a", vec({1, 0})}, {"b", vec({0, 1})}};
  EXPECT_THROW(centroid_cluster({vec({1, 2}), vec({-1, -2})}, pool), ZeroVectorError);
  EXPECT_THROW(centroid_cluster({}, pool), EmptyExemplarError);
}

TEST(Lsh, IdenticalVectorsAlwaysCollide) {
  Rng rng(6);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto pool = random_pool(10, 8, rng);
    pool.emplace_back("twin", pool[4].second);
    EXPECT_TRUE(lsh_block(pool, {}, seed).count({"i004", "twin"}));
  }
}

TEST(Lsh, OrthogonalRateFollowsBandingCurve) {
  const VectorPool pool{{"x", vec({1, 0, 0, 0})}, {"y", vec({0, 1, 0, 0})}};
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) hits += !lsh_block(pool, {64, 16, 4}, seed).empty();
  const double expected = lsh_collision_probability(M_PI / 2, 16, 4);
  EXPECT_NEAR(expected, 1.0 - std::pow(15.0 / 16.0, 16), 1e-12);
  EXPECT_NEAR(hits / 100.0, expected, 0.15);
  // longer bands push the orthogonal rate down
  int strict = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) strict += !lsh_block(pool, {64, 8, 8}, seed).empty();
  EXPECT_LT(strict, hits);
}

TEST(Lsh, PreservesHighCosinePairsOnFiftyVectors) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    // ten clusters of five near-duplicates plus spread
    VectorPool pool;
    for (int c = 0; c < 10; ++c) {
      Eigen::VectorXd center(16);
      for (auto& x : center) x = rng.normal();
      for (int m = 0; m < 5; ++m) {
        Eigen::VectorXd v = center;
        for (auto& x : v) x += rng.normal() * (0.05 + 0.3 * (m % 3));
        pool.emplace_back("c" + std::to_string(c) + "m" + std::to_string(m), v);
      }
    }
    const auto cands = lsh_block(pool, {}, seed);
    int high = 0;
    for (std::size_t a = 0; a < pool.size(); ++a) {
      for (std::size_t b = a + 1; b < pool.size(); ++b) {
        const auto key = std::make_pair(std::min(pool[a].first, pool[b].first), std::max(pool[a].first, pool[b].first));
        if (cosine(pool[a].second, pool[b].second) >= 0.9) {
          ++high;
          EXPECT_TRUE(cands.count(key)) << key.first << " " << key.second;
        }
      }
    }
    EXPECT_GT(high, 20);
    for (const auto& [x, y] : cands) EXPECT_LT(x, y);
  }
}

TEST(Lsh, BlockedRankingMatchesFullAboveThreshold) {
  Rng rng(7);
  VectorPool pool;
  for (int c = 0; c < 10; ++c) {
    Eigen::VectorXd center(16);
    for (auto& x : center) x = rng.normal();
    for (int m = 0; m < 5; ++m) {
      Eigen::VectorXd v = center;
      for (auto& x : v) x += rng.normal() * 0.05;
      pool.emplace_back("c" + std::to_string(c) + "m" + std::to_string(m), v);
    }
  }
  const auto pairs = lsh_block(pool, {}, 11);
  for (const auto& [q, _] : pool) {
    std::set<std::string> cand;
    for (const auto& [x, y] : pairs) {
      if (x == q) cand.insert(y);
      if (y == q) cand.insert(x);
    }
    const auto full = topk_cluster(q, pool, 4);
    ASSERT_GE(full.entries.back().score, 0.9);
    const auto blocked = topk_cluster(q, pool, 4, &cand);
    ASSERT_EQ(blocked.entries.size(), full.entries.size());
    for (std::size_t i = 0; i < full.entries.size(); ++i) EXPECT_EQ(blocked.entries[i].id, full.entries[i].id);
  }
}

TEST(Lsh, PlaneCountMustMatch) {
  const VectorPool pool{{"a", vec({1, 0})}, {"b", vec({0, 1})}};
  EXPECT_THROW(lsh_block(pool, {60, 16, 4}, 0), ConfigError);
  EXPECT_THROW(lsh_block({{"z", vec({0, 0})}}, {}, 0), ZeroVectorError);
}

TEST(GroundTruthCsv, RoundTripWithQuoting) {
  const GroundTruth truth{{"t0001#2", "oncology.drug"}, {"a,b", "say \"hi\""}, {"x", "y"}};
  EXPECT_EQ(parse_ground_truth_csv(ground_truth_csv(truth)), truth);
  EXPECT_THROW(parse_ground_truth_csv("a,b,c\n"), SchemaError);
  EXPECT_EQ(parse_ground_truth_csv("k,v\r\n").at("k"), "v");
}

TEST(Tasks, NamesRoundTrip) {
  for (Task t : {Task::kCC, Task::kTC, Task::kEC}) EXPECT_EQ(task_from_string(to_string(t)), t);
  EXPECT_THROW(task_from_string("xx"), UsageError);
}

TEST(Tasks, RandomTableClusteringNearChance) {
  // 5 topics x 10 tables: 9 relevant among 49 candidates per query
  GroundTruth truth;
  std::vector<ItemPool> like{{"all", {}}};
  for (int i = 0; i < 50; ++i) {
    const std::string id = "t" + std::to_string(i);
    truth[id] = "topic" + std::to_string(i % 5);
    like[0].items.emplace_back(id, Eigen::VectorXd::Ones(48));
  }
  double sum = 0;
  const int seeds = 10;
  for (int s = 0; s < seeds; ++s) {
    EvalOptions opt;
    opt.seed = static_cast<std::uint64_t>(s);
    sum += score_pools(Task::kTC, random_pools(like, opt.seed), truth, opt).overall().map;
  }
  EXPECT_NEAR(sum / seeds, 9.0 / 49.0, 0.1);
}

TEST(Tasks, IdenticalColumnsClusterPerfectly) {
  Table t;
  t.source_id = "twin";
  t.hmd = HeaderTree::flat({"drug", "drug"});
  t.data = {{Cell::string("folfox"), Cell::string("folfox")}, {Cell::string("ifl"), Cell::string("ifl")}};
  EncoderConfig e;
  e.hidden = 12;
  e.layers = 1;
  e.heads = 2;
  ModelBundle b = empty_bundle(make_featurizer({t}), e);
  Rng rng(8);
  for (SegmentKind s : kAllSegments) {
    SegmentModel<float> m(s, b.shape(), e);
    m.init(rng, 0.3);
    b.put(std::move(m));
  }
  const GroundTruth truth{{"twin#0", "drug"}, {"twin#1", "drug"}};
  const auto r = run_task(Task::kCC, {t}, b, truth, {});
  EXPECT_EQ(r.overall().map, 1.0);
  EXPECT_EQ(r.overall().mrr, 1.0);
  EXPECT_EQ(r.overall().n_queries, 2);
  const auto j = to_json(r);
  EXPECT_EQ(j["task"], "cc");
  EXPECT_EQ(j["strata"].size(), 3u);
  EXPECT_EQ(j["config"]["k"], 20);
}

class EntityTask : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const std::vector<std::string> drugs{"folfox", "ifl", "capox", "folfiri", "xelox",
                                         "bevacizumab", "cetuximab", "panitumumab", "regorafenib", "trifluridine"};
    const std::vector<std::string> cities{"tampa", "miami", "orlando", "austin", "dallas",
                                          "boston", "denver", "seattle", "portland", "chicago"};
    Rng rng(9);
    for (int n = 0; n < 30; ++n) {
      Table t;
      t.source_id = "e" + std::to_string(n);
      t.hmd = HeaderTree::flat({"regimen", "site", "patients"});
      for (int i = 0; i < 5; ++i) {
        t.data.push_back({Cell::string(drugs[rng.below(10)]), Cell::string(cities[rng.below(10)]),
                          testing::number_cell(std::to_string(10 + rng.below(90)), "")});
      }
      tables_.push_back(std::move(t));
    }
    for (const auto& d : drugs) truth_[d] = "drug";
    for (const auto& c : cities) truth_[c] = "city";
    EncoderConfig e;
    e.hidden = 24;
    e.layers = 1;
    e.heads = 2;
    bundle_ = empty_bundle(make_featurizer(tables_), e);
    auto cfg = TrainConfig::desk();
    cfg.steps = 150;
    train_segments(bundle_, tables_, {SegmentKind::kDataCol}, cfg, {});
  }
  static std::vector<Table> tables_;
  static GroundTruth truth_;
  static ModelBundle bundle_;
};
std::vector<Table> EntityTask::tables_;
GroundTruth EntityTask::truth_;
ModelBundle EntityTask::bundle_;

TEST_F(EntityTask, TrainedBeatsRandomOnSameSplit) {
  EvalOptions opt;
  const auto pools = build_pools(Task::kEC, tables_, bundle_, truth_, opt);
  ASSERT_EQ(pools.size(), 1u);
  EXPECT_EQ(pools[0].items.size(), 20u);
  const double trained = score_pools(Task::kEC, pools, truth_, opt).overall().map;
  const double random = score_pools(Task::kEC, random_pools(pools, opt.seed), truth_, opt).overall().map;
  EXPECT_GE(trained, random) << trained << " vs " << random;
}

TEST_F(EntityTask, ReportsAreDeterministic) {
  EvalOptions opt;
  const auto a = to_json(run_task(Task::kEC, tables_, bundle_, truth_, opt));
  const auto b = to_json(run_task(Task::kEC, tables_, bundle_, truth_, opt));
  EXPECT_EQ(a.dump(), b.dump());
  EXPECT_THROW(run_task(Task::kCC, tables_, bundle_, {{"e0#0", "x"}}, opt), MissingModelError);
}

}  // namespace
}  // namespace tabbin
