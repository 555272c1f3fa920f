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

// Composite embeddings: concatenations of mean-pooled hidden states from the
// segment models, for columns, tables, numeric values and ranges.

#ifndef TABBIN_COMPOSITES_HPP_
#define TABBIN_COMPOSITES_HPP_

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabbin/bundle.hpp"
#include "tabbin/errors.hpp"
#include "tabbin/model.hpp"
#include "tabbin/sequence.hpp"

namespace tabbin {

struct CompositePart {
  std::string source;  // segment model name
  std::string unit;    // what was pooled
  int begin = 0;
  int end = 0;
};

struct CompositeEmbedding {
  std::string recipe;
  Eigen::VectorXd vector;
  std::vector<CompositePart> parts;
};

struct CompositeOptions {
  // Missing segment models contribute zero slices instead of raising.
  bool missing_as_zero = false;
};

template <class T>
RowVector<T> pool(const Matrix<T>& hidden, const std::vector<int>& unit) {
  if (unit.empty()) throw EmptyUnitError("cannot pool an empty token set");
  RowVector<T> acc = RowVector<T>::Zero(hidden.cols());
  for (int i : unit) {
    if (i < 0 || i >= hidden.rows()) throw IndexError("pool index " + std::to_string(i) + " out of range");
    acc += hidden.row(i);
  }
  return acc / static_cast<T>(unit.size());
}

namespace detail {

// Running mean of selected hidden states across several sequences.
class PoolAccumulator {
 public:
  explicit PoolAccumulator(int h) : sum_(Eigen::VectorXd::Zero(h)) {}

  void add(const Matrix<float>& hidden, const std::vector<int>& rows) {
    for (int i : rows) sum_ += hidden.row(i).transpose().cast<double>();
    count_ += static_cast<long>(rows.size());
  }
  long count() const { return count_; }
  Eigen::VectorXd mean() const {
    if (count_ == 0) throw EmptyUnitError("cannot pool an empty token set");
    return sum_ / static_cast<double>(count_);
  }

 private:
  Eigen::VectorXd sum_;
  long count_ = 0;
};

class CompositeBuilder {
 public:
  explicit CompositeBuilder(std::string recipe) { out_.recipe = std::move(recipe); }

  void add(std::string source, std::string unit, const Eigen::VectorXd& v) {
    const int begin = static_cast<int>(parts_.size() ? out_.parts.back().end : 0);
    out_.parts.push_back({std::move(source), std::move(unit), begin, begin + static_cast<int>(v.size())});
    parts_.push_back(v);
  }

  CompositeEmbedding finish() {
    int total = out_.parts.empty() ? 0 : out_.parts.back().end;
    out_.vector.resize(total);
    for (std::size_t i = 0; i < parts_.size(); ++i) {
      out_.vector.segment(out_.parts[i].begin, parts_[i].size()) = parts_[i];
    }
    return std::move(out_);
  }

 private:
  CompositeEmbedding out_;
  std::vector<Eigen::VectorXd> parts_;
};

// Content positions of the cells accepted by `pick`, or their [SEP] tokens
// when those cells have no content at all.
template <class Pick>
std::vector<int> cell_positions(const TokenSequence& seq, Pick&& pick) {
  std::vector<int> content, seps;
  for (int i = 0; i < seq.size(); ++i) {
    const auto& s = seq.slots[i];
    if (s.cell < 0 || !pick(seq.cells[s.cell])) continue;
    (s.role == SlotRole::kContent ? content : seps).push_back(i);
  }
  return content.empty() ? seps : content;
}

// Mean over cells accepted by `pick` across every sequence of one segment.
template <class Pick>
Eigen::VectorXd pooled_segment(const Table& t, SegmentKind seg, const CoordinateMap& coords,
                               const ModelBundle& b, Pick&& pick, bool* empty = nullptr) {
  const auto& m = b.model(seg);
  PoolAccumulator acc(b.encoder.hidden);
  for (const auto& s : build_sequences(t, seg, coords, b.featurizer)) {
    auto rows = cell_positions(s, pick);
    if (rows.empty()) continue;
    acc.add(encode_sequence(m, s), rows);
  }
  if (empty) *empty = acc.count() == 0;
  if (acc.count() == 0) return Eigen::VectorXd::Zero(b.encoder.hidden);
  return acc.mean();
}

inline bool usable(const ModelBundle& b, SegmentKind seg, const CompositeOptions& opt) {
  if (b.has(seg)) return true;
  if (opt.missing_as_zero) return false;
  throw MissingModelError("composite needs the " + std::string(to_string(seg)) + " model");
}

// "[CLS] tokens [SEP]" with full visibility.
inline TokenSequence cell_sequence(std::vector<TokenRecord> toks, SegmentKind seg) {
  TokenSequence s = build_text_sequence("", Featurizer{}, seg);
  TokenRecord sep = s.tokens.back();
  s.tokens.resize(1);
  s.slots.resize(1);
  for (std::size_t i = 0; i < toks.size(); ++i) {
    toks[i].in_pos = static_cast<int>(std::min<std::size_t>(i, kMaxCellTokens - 1));
    s.tokens.push_back(toks[i]);
    s.slots.push_back({SlotRole::kContent, 0, 0});
  }
  sep.in_pos = std::min<int>(static_cast<int>(toks.size()), kMaxCellTokens - 1);
  s.tokens.push_back(sep);
  s.slots.push_back({SlotRole::kSep, 0, 0});
  s.visibility = BinaryMatrix::ones(s.size());
  return s;
}

inline Eigen::VectorXd pooled_cell(const SegmentModel<float>& m, const TokenSequence& s) {
  std::vector<int> rows;
  for (int i = 0; i < s.size(); ++i) {
    if (s.slots[i].role == SlotRole::kContent) rows.push_back(i);
  }
  if (rows.empty()) rows.push_back(s.size() - 1);
  return pool(encode_sequence(m, s), rows).transpose().cast<double>();
}

inline TokenRecord value_token(const Decimal& v, const std::optional<UnitClass>& unit, const Featurizer& fz) {
  TokenRecord r;
  r.token_id = kValId;
  r.is_number = true;
  r.num = number_features(v.literal);
  r.text = v.literal;
  if (unit) r.feat[static_cast<int>(*unit)] = 1;
  r.type_id = fz.types.index_of("numeric");
  return r;
}

}  // namespace detail

// HMD-model pool over the column's leaf header, then DataCol-model pool over
// the column's data tokens. Length 2H.
inline CompositeEmbedding column_composite(const Table& t, int j, const ModelBundle& b,
                                           const CompositeOptions& opt = {}) {
  if (j < 0 || j >= t.cols()) throw IndexError("column " + std::to_string(j) + " out of range");
  const auto coords = assign_coordinates(t);
  const int h = b.encoder.hidden;
  detail::CompositeBuilder out("colcomp");
  const int leaf = t.hmd.leaf_node(j + 1);
  if (detail::usable(b, SegmentKind::kHmd, opt)) {
    out.add("hmd", "attribute", detail::pooled_segment(t, SegmentKind::kHmd, coords, b,
                                                       [&](const CellRef& c) { return c.node == leaf; }));
  } else {
    out.add("hmd", "attribute", Eigen::VectorXd::Zero(h));
  }
  if (detail::usable(b, SegmentKind::kDataCol, opt)) {
    out.add("col", "column data", detail::pooled_segment(t, SegmentKind::kDataCol, coords, b,
                                                         [&](const CellRef& c) { return c.col == j; }));
  } else {
    out.add("col", "column data", Eigen::VectorXd::Zero(h));
  }
  return out.finish();
}

// tblcomp1: data (DataRow model), HMD and VMD pools; an empty VMD gives a
// zero slice. tblcomp2 appends the caption pooled through the DataRow model.
inline CompositeEmbedding table_composite(const Table& t, const ModelBundle& b,
                                          const std::string& recipe = "tblcomp1",
                                          const CompositeOptions& opt = {}) {
  if (recipe != "tblcomp1" && recipe != "tblcomp2") {
    throw UsageError("unknown table recipe '" + recipe + "'");
  }
  const auto coords = assign_coordinates(t);
  const int h = b.encoder.hidden;
  auto all = [](const CellRef&) { return true; };
  detail::CompositeBuilder out(recipe);
  struct Slice {
    SegmentKind seg;
    const char* unit;
  };
  for (Slice s : {Slice{SegmentKind::kDataRow, "data"}, Slice{SegmentKind::kHmd, "hmd"},
                  Slice{SegmentKind::kVmd, "vmd"}}) {
    const std::string src(to_string(s.seg));
    if (s.seg == SegmentKind::kVmd && t.vmd.empty()) {
      out.add(src, s.unit, Eigen::VectorXd::Zero(h));
    } else if (detail::usable(b, s.seg, opt)) {
      out.add(src, s.unit, detail::pooled_segment(t, s.seg, coords, b, all));
    } else {
      out.add(src, s.unit, Eigen::VectorXd::Zero(h));
    }
  }
  if (recipe == "tblcomp2") {
    const std::string src(to_string(SegmentKind::kDataRow));
    if (!t.caption.empty() && detail::usable(b, SegmentKind::kDataRow, opt)) {
      auto seq = build_text_sequence(t.caption, b.featurizer);
      out.add(src, "caption", detail::pooled_cell(b.model(SegmentKind::kDataRow), seq));
    } else {
      out.add(src, "caption", Eigen::VectorXd::Zero(h));
    }
  }
  return out.finish();
}

// Attribute (HMD model), value and unit (DataCol model). A missing unit is
// embedded through the [UNK] token. Length 3H.
inline CompositeEmbedding numeric_composite(const std::string& attribute, const Decimal& value,
                                            const std::optional<std::string>& unit,
                                            const ModelBundle& b) {
  const auto& hmd = b.model(SegmentKind::kHmd);
  const auto& col = b.model(SegmentKind::kDataCol);
  const auto& fz = b.featurizer;
  const auto cls = unit ? fz.units.lookup(*unit) : std::nullopt;
  detail::CompositeBuilder out("numeric_ce");
  out.add("hmd", "attribute",
          detail::pooled_cell(hmd, build_text_sequence(attribute, fz, SegmentKind::kHmd)));
  out.add("col", "value",
          detail::pooled_cell(col, detail::cell_sequence({detail::value_token(value, cls, fz)},
                                                         SegmentKind::kDataCol)));
  std::vector<TokenRecord> unit_toks;
  if (unit && !unit->empty()) unit_toks = fz.tokenize_cell(Cell::string(*unit));
  if (unit_toks.empty()) {
    TokenRecord r;
    r.token_id = kUnkId;
    r.text = "[UNK]";
    unit_toks.push_back(r);
  }
  out.add("col", "unit", detail::pooled_cell(col, detail::cell_sequence(unit_toks, SegmentKind::kDataCol)));
  return out.finish();
}

// Attribute, unit, range start and range end. Length 4H.
inline CompositeEmbedding range_composite(const std::string& attribute,
                                          const std::optional<std::string>& unit, const Decimal& lo,
                                          const Decimal& hi, const ModelBundle& b) {
  if (lo.value > hi.value) {
    throw RangeOrderError("range start " + lo.literal + " exceeds range end " + hi.literal);
  }
  auto num = numeric_composite(attribute, lo, unit, b);
  auto num_hi = numeric_composite(attribute, hi, unit, b);
  const int h = b.encoder.hidden;
  detail::CompositeBuilder out("range_ce");
  out.add("hmd", "attribute", num.vector.segment(0, h));
  out.add("col", "unit", num.vector.segment(2 * h, h));
  out.add("col", "range start", num.vector.segment(h, h));
  out.add("col", "range end", num_hi.vector.segment(h, h));
  return out.finish();
}

// Binary little-endian f32 vectors plus a JSON manifest.
struct EmbeddingDump {
  std::string recipe;
  int hidden = 0;
  std::vector<std::pair<std::string, Eigen::VectorXd>> items;
  nlohmann::json config = nlohmann::json::object();
};

inline void write_embedding_dump(const EmbeddingDump& d, const std::filesystem::path& prefix) {
  std::string blob;
  nlohmann::json offsets = nlohmann::json::object();
  int dim = d.items.empty() ? 0 : static_cast<int>(d.items.front().second.size());
  for (const auto& [id, v] : d.items) {
    if (v.size() != dim) throw ShapeError("embedding dump needs equal-length vectors");
    offsets[id] = blob.size();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const float f = static_cast<float>(v(i));
      blob.append(reinterpret_cast<const char*>(&f), sizeof f);
    }
  }
  nlohmann::json manifest{{"recipe", d.recipe}, {"H", d.hidden},      {"dim", dim},
                          {"count", d.items.size()}, {"offsets", offsets}, {"config", d.config}};
  auto bin = prefix;
  bin += ".f32";
  auto meta = prefix;
  meta += ".json";
  write_file_atomic(bin, blob);
  write_file_atomic(meta, manifest.dump(2));
}

inline EmbeddingDump read_embedding_dump(const std::filesystem::path& prefix) {
  auto bin = prefix;
  bin += ".f32";
  auto meta = prefix;
  meta += ".json";
  const auto manifest = nlohmann::json::parse(read_file(meta));
  const std::string blob = read_file(bin);
  EmbeddingDump d;
  d.recipe = manifest.at("recipe");
  d.hidden = manifest.at("H");
  d.config = manifest.value("config", nlohmann::json::object());
  const int dim = manifest.at("dim");
  std::vector<std::pair<std::size_t, std::string>> order;
  for (const auto& [id, off] : manifest.at("offsets").items()) order.emplace_back(off.get<std::size_t>(), id);
  std::sort(order.begin(), order.end());
  for (const auto& [off, id] : order) {
    if (off + sizeof(float) * dim > blob.size()) throw FormatError("embedding dump truncated");
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i) {
      float f;
      std::memcpy(&f, blob.data() + off + sizeof(float) * i, sizeof f);
      v(i) = f;
    }
    d.items.emplace_back(id, std::move(v));
  }
  return d;
}

}  // namespace tabbin

#endif  // TABBIN_COMPOSITES_HPP_
