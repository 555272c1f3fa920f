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

#include <filesystem>

#include "fixtures.hpp"
#include "tabbin/composites.hpp"
#include "tabbin/pipeline.hpp"

namespace tabbin {
namespace {

constexpr int kH = 12;

ModelBundle random_bundle(const std::vector<Table>& tables, const AblationFlags& flags = {},
                          std::uint64_t seed = 1) {
  EncoderConfig e;
  e.hidden = kH;
  e.layers = 1;
  e.heads = 2;
  e.dropout = 0.0;
  ModelBundle b = empty_bundle(make_featurizer(tables), e);
  Rng rng(seed);
  for (SegmentKind s : kAllSegments) {
    SegmentModel<float> m(s, b.shape(), e, flags);
    m.init(rng, 0.3);
    b.put(std::move(m));
  }
  return b;
}

void expect_parts_partition(const CompositeEmbedding& c) {
  int at = 0;
  Eigen::VectorXd rebuilt(c.vector.size());
  for (const auto& p : c.parts) {
    EXPECT_EQ(p.begin, at);
    EXPECT_GT(p.end, p.begin);
    rebuilt.segment(p.begin, p.end - p.begin) = c.vector.segment(p.begin, p.end - p.begin);
    at = p.end;
  }
  EXPECT_EQ(at, c.vector.size());
  EXPECT_EQ(rebuilt, c.vector);
}

TEST(Pool, MeanOfUnit) {
  Rng rng(1);
  Matrix<double> h(4, kH);
  fill_normal(h, rng, 1.0);
  EXPECT_EQ(pool(h, {2}), h.row(2));
  Matrix<double> same(2, kH);
  same.row(0) = h.row(1);
  same.row(1) = h.row(1);
  EXPECT_TRUE(pool(same, {0, 1}).isApprox(h.row(1), 1e-15));
  const RowVector<double> p = pool(h, {0, 2});
  for (int i = 0; i < kH; ++i) EXPECT_DOUBLE_EQ(p(i), (h(0, i) + h(2, i)) / 2);
  EXPECT_TRUE(pool(h, {3, 0, 1}).isApprox(pool(h, {1, 3, 0}), 1e-15));
  EXPECT_THROW(pool(h, {}), EmptyUnitError);
  EXPECT_THROW(pool(h, {4}), IndexError);
}

TEST(ColumnComposite, ShapeAndParts) {
  const Table t = testing::people_table();
  const auto b = random_bundle({t});
  for (int j = 0; j < t.cols(); ++j) {
    const auto c = column_composite(t, j, b);
    EXPECT_EQ(c.recipe, "colcomp");
    EXPECT_EQ(c.vector.size(), 2 * kH);
    expect_parts_partition(c);
    EXPECT_NEAR(c.vector.dot(c.vector) / c.vector.squaredNorm(), 1.0, 1e-9);
  }
  EXPECT_THROW(column_composite(t, 3, b), IndexError);
}

TEST(ColumnComposite, SingleCellColumn) {
  Table t;
  t.hmd = HeaderTree::flat({"drug"});
  t.data = {{Cell::string("folfox")}};
  const auto b = random_bundle({t});
  EXPECT_EQ(column_composite(t, 0, b).vector.size(), 2 * kH);
}

TEST(ColumnComposite, SwappingColumnsSwapsComposites) {
  Table t = testing::people_table();
  Table s = t;
  auto label = [&](int leaf) { return t.hmd.node(t.hmd.leaf_node(leaf)).label; };
  s.hmd = HeaderTree::flat({label(3), label(2), label(1)});
  for (auto& row : s.data) std::swap(row[0], row[2]);
  AblationFlags f;
  f.no_bicoords = true;
  const auto b = random_bundle({t}, f);
  for (auto [a, c] : {std::pair{0, 2}, std::pair{2, 0}, std::pair{1, 1}}) {
    const auto x = column_composite(t, a, b).vector;
    const auto y = column_composite(s, c, b).vector;
    EXPECT_LT((x - y).cwiseAbs().maxCoeff(), 1e-6) << a;
  }
}

TEST(ColumnComposite, BicoordAblation) {
  const Table nested = testing::efficacy_table();
  const auto full = random_bundle({nested});
  AblationFlags f;
  f.no_bicoords = true;
  const auto ablated = random_bundle({nested}, f);
  EXPECT_GT((column_composite(nested, 1, full).vector - column_composite(nested, 1, ablated).vector).norm(),
            1e-3);

  // once coordinates are ablated only row 0 of each positional table is read
  const Table flat = testing::people_table();
  const auto fa = random_bundle({flat}, f);
  auto fb = fa;
  Rng rng(5);
  for (auto& [seg, m] : fb.models) {
    for (auto* tab : {&m.emb.vr, &m.emb.vc, &m.emb.hr, &m.emb.hc, &m.emb.nr, &m.emb.nc}) {
      Matrix<float> noise(tab->rows() - 1, tab->cols());
      fill_normal(noise, rng, 1.0);
      tab->bottomRows(tab->rows() - 1) = noise;
    }
  }
  for (int j = 0; j < flat.cols(); ++j) {
    EXPECT_EQ(column_composite(flat, j, fa).vector, column_composite(flat, j, fb).vector);
  }
  EXPECT_EQ(column_composite(nested, 1, ablated).vector.size(), 2 * kH);
}

TEST(ColumnComposite, MissingModel) {
  const Table t = testing::people_table();
  auto b = random_bundle({t});
  b.models.erase(SegmentKind::kDataCol);
  EXPECT_THROW(column_composite(t, 0, b), MissingModelError);
  const auto c = column_composite(t, 0, b, {true});
  EXPECT_TRUE(c.vector.tail(kH).isZero(0));
  EXPECT_FALSE(c.vector.head(kH).isZero(0));
}

TEST(TableComposite, RelationalHasZeroVmdSlice) {
  const Table t = testing::people_table();
  const auto b = random_bundle({t});
  const auto c1 = table_composite(t, b, "tblcomp1");
  ASSERT_EQ(c1.vector.size(), 3 * kH);
  EXPECT_TRUE(c1.vector.segment(2 * kH, kH).isZero(0));
  EXPECT_FALSE(c1.vector.head(kH).isZero(0));
  expect_parts_partition(c1);
  const auto c2 = table_composite(t, b, "tblcomp2");
  EXPECT_EQ(c2.vector.size(), c1.vector.size() + kH);
  EXPECT_EQ(c2.vector.head(3 * kH), c1.vector);
  EXPECT_THROW(table_composite(t, b, "tblcomp3"), UsageError);
}

TEST(TableComposite, IdenticalTablesIdenticalBits) {
  const Table a = testing::deep_table();
  Table b2 = testing::deep_table();
  b2.source_id = "other";
  const auto b = random_bundle({a});
  for (const char* r : {"tblcomp1", "tblcomp2"}) {
    EXPECT_EQ(table_composite(a, b, r).vector, table_composite(b2, b, r).vector);
  }
  EXPECT_FALSE(table_composite(a, b).vector.segment(2 * kH, kH).isZero(0));
}

TEST(TableComposite, MissingVmdModel) {
  const Table t = testing::deep_table();
  auto b = random_bundle({t});
  b.models.erase(SegmentKind::kVmd);
  EXPECT_THROW(table_composite(t, b), MissingModelError);
  EXPECT_NO_THROW(table_composite(testing::people_table(), b));
}

TEST(NumericComposite, MiddleSliceFollowsNumberFeatures) {
  const auto b = random_bundle({testing::efficacy_table()});
  const auto os = numeric_composite("OS", decimal_from_string("20.3"), "months", b);
  ASSERT_EQ(os.vector.size(), 3 * kH);
  expect_parts_partition(os);
  const auto twin = numeric_composite("OS", decimal_from_string("21.3"), "months", b);
  EXPECT_EQ(os.vector.tail(2 * kH), twin.vector.tail(2 * kH));
  const auto other = numeric_composite("OS", decimal_from_string("7.25"), "months", b);
  EXPECT_NE(os.vector.segment(kH, kH), other.vector.segment(kH, kH));
  EXPECT_EQ(os.vector.head(kH), other.vector.head(kH));
}

TEST(NumericComposite, MissingUnitUsesUnknownToken) {
  const auto b = random_bundle({testing::people_table()});
  const auto age = numeric_composite("Age", decimal_from_string("0"), std::nullopt, b);
  const auto blank = numeric_composite("Age", decimal_from_string("0"), std::string(""), b);
  EXPECT_EQ(age.vector.size(), 3 * kH);
  EXPECT_EQ(age.vector, blank.vector);
  EXPECT_TRUE(age.vector.allFinite());
}

TEST(RangeComposite, ShapeOrderAndDegenerate) {
  const auto b = random_bundle({testing::people_table()});
  const auto r = range_composite("Age", "year", decimal_from_string("20"), decimal_from_string("30"), b);
  ASSERT_EQ(r.vector.size(), 4 * kH);
  expect_parts_partition(r);
  EXPECT_EQ(r.parts[2].unit, "range start");
  const auto d = range_composite("Age", "year", decimal_from_string("25"), decimal_from_string("25"), b);
  EXPECT_EQ(d.vector.segment(2 * kH, kH), d.vector.segment(3 * kH, kH));
  EXPECT_THROW(range_composite("Age", "year", decimal_from_string("30"), decimal_from_string("20"), b),
               RangeOrderError);
}

TEST(EmbeddingDump, RoundTrip) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "tabbin_dump_test";
  fs::remove_all(dir);
  EmbeddingDump d;
  d.recipe = "colcomp";
  d.hidden = kH;
  Rng rng(3);
  for (int i = 0; i < 5; ++i) {
    Eigen::VectorXd v(2 * kH);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    d.items.emplace_back("t#" + std::to_string(i), v);
  }
  write_embedding_dump(d, dir / "emb");
  EXPECT_EQ(fs::file_size(dir / "emb.f32"), 5u * 2 * kH * sizeof(float));
  const auto back = read_embedding_dump(dir / "emb");
  EXPECT_EQ(back.recipe, "colcomp");
  EXPECT_EQ(back.hidden, kH);
  ASSERT_EQ(back.items.size(), 5u);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(back.items[i].first, d.items[i].first);
    EXPECT_EQ(back.items[i].second, d.items[i].second);
  }
  d.items.emplace_back("bad", Eigen::VectorXd::Zero(3));
  EXPECT_THROW(write_embedding_dump(d, dir / "bad"), ShapeError);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace tabbin
