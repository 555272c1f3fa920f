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

// Serialization of table segments into token sequences and construction of
// the visibility matrix that restricts attention to structurally related
// tokens.

#ifndef TABBIN_SEQUENCE_HPP_
#define TABBIN_SEQUENCE_HPP_

#include <algorithm>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabbin/errors.hpp"
#include "tabbin/featurizer.hpp"
#include "tabbin/table.hpp"

namespace tabbin {

inline constexpr int kMaxSequenceLength = 256;

enum class SegmentKind { kDataRow, kDataCol, kHmd, kVmd };

inline constexpr std::array<SegmentKind, 4> kAllSegments = {
    SegmentKind::kDataRow, SegmentKind::kDataCol, SegmentKind::kHmd, SegmentKind::kVmd};

inline std::string_view to_string(SegmentKind s) {
  switch (s) {
    case SegmentKind::kDataRow: return "row";
    case SegmentKind::kDataCol: return "col";
    case SegmentKind::kHmd: return "hmd";
    case SegmentKind::kVmd: return "vmd";
  }
  return "?";
}

inline SegmentKind segment_from_string(std::string_view s) {
  for (auto k : kAllSegments) {
    if (to_string(k) == s) return k;
  }
  throw UsageError("unknown segment '" + std::string(s) + "' (expected row, col, hmd or vmd)");
}

inline bool is_data_segment(SegmentKind s) {
  return s == SegmentKind::kDataRow || s == SegmentKind::kDataCol;
}

struct AblationFlags {
  bool no_visibility = false;     // standard full attention
  bool no_type = false;           // drop the type embedding
  bool no_units_nesting = false;  // drop the unit/nesting features
  bool no_bicoords = false;       // every coordinate becomes (0,0)

  bool any() const { return no_visibility || no_type || no_units_nesting || no_bicoords; }
  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

inline nlohmann::json to_json(const AblationFlags& f) {
  return {{"no_visibility", f.no_visibility}, {"no_type", f.no_type},
          {"no_units_nesting", f.no_units_nesting}, {"no_bicoords", f.no_bicoords}};
}

inline AblationFlags ablation_flags_from_json(const nlohmann::json& j) {
  AblationFlags f;
  f.no_visibility = j.value("no_visibility", false);
  f.no_type = j.value("no_type", false);
  f.no_units_nesting = j.value("no_units_nesting", false);
  f.no_bicoords = j.value("no_bicoords", false);
  return f;
}

// Square binary matrix, row-major.
class BinaryMatrix {
 public:
  BinaryMatrix() = default;
  BinaryMatrix(int n, std::uint8_t fill) : n_(n), data_(static_cast<std::size_t>(n) * n, fill) {}

  static BinaryMatrix ones(int n) { return BinaryMatrix(n, 1); }
  static BinaryMatrix identity(int n) {
    BinaryMatrix m(n, 0);
    for (int i = 0; i < n; ++i) m(i, i) = 1;
    return m;
  }

  int size() const { return n_; }
  std::uint8_t& operator()(int i, int j) { return data_[static_cast<std::size_t>(i) * n_ + j]; }
  std::uint8_t operator()(int i, int j) const { return data_[static_cast<std::size_t>(i) * n_ + j]; }
  const std::vector<std::uint8_t>& raw() const { return data_; }

  friend bool operator==(const BinaryMatrix&, const BinaryMatrix&) = default;

 private:
  int n_ = 0;
  std::vector<std::uint8_t> data_;
};

enum class SlotRole { kCls, kSep, kContent };

struct TokenSlot {
  SlotRole role = SlotRole::kContent;
  int unit = 0;   // row/column/tree unit within the sequence
  int cell = -1;  // index into TokenSequence::cells, -1 for [CLS]
};

// A cell as seen by one segment of one table; used for cloze distractors.
struct CellContent {
  std::string key;                   // identity of the cell string
  std::vector<TokenRecord> tokens;   // content tokens, no delimiters
};

struct CellRef {
  int row = -1;     // data grid position, 0-based (data segments)
  int col = -1;
  int node = -1;    // header node id (metadata segments)
  int parent = -1;
  std::vector<int> path;  // header node ids from the root down to `node`
  int pool_index = -1;
  bool nested = false;
};

struct TokenSequence {
  SegmentKind segment = SegmentKind::kDataRow;
  std::vector<TokenRecord> tokens;
  std::vector<TokenSlot> slots;
  std::vector<CellRef> cells;
  BinaryMatrix visibility;
  std::string table_id;
  std::vector<int> covered;  // row ids, column ids or root node ids
  std::shared_ptr<const std::vector<CellContent>> table_cells;

  int size() const { return static_cast<int>(tokens.size()); }
};

// Visibility: tokens of the same cell, the same grid row or the same grid
// column see each other; in metadata segments nodes see ancestors,
// descendants and siblings. [CLS] sees its own unit and every other [CLS];
// [SEP] behaves like the cell it closes.
inline BinaryMatrix build_visibility_matrix(const TokenSequence& seq) {
  const int n = seq.size();
  BinaryMatrix m(n, 0);
  auto cells_related = [&](int a, int b) {
    if (a == b) return true;
    const CellRef& x = seq.cells[a];
    const CellRef& y = seq.cells[b];
    if (is_data_segment(seq.segment)) return x.row == y.row || x.col == y.col;
    auto on_path = [](const CellRef& c, int node) {
      return std::find(c.path.begin(), c.path.end(), node) != c.path.end();
    };
    if (x.node == y.node || on_path(x, y.node) || on_path(y, x.node)) return true;
    return x.parent == y.parent;
  };
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      const TokenSlot& a = seq.slots[i];
      const TokenSlot& b = seq.slots[j];
      bool visible;
      if (i == j) {
        visible = true;
      } else if (a.role == SlotRole::kCls && b.role == SlotRole::kCls) {
        visible = true;
      } else if (a.role == SlotRole::kCls || b.role == SlotRole::kCls) {
        visible = a.unit == b.unit;
      } else {
        visible = cells_related(a.cell, b.cell);
      }
      m(i, j) = m(j, i) = visible ? 1 : 0;
    }
  }
  return m;
}

namespace detail {

struct CellTokens {
  std::vector<TokenRecord> tokens;
  CellRef ref;
  BiCoordinate sep_coord;
  CellFeatures sep_feat{};
  int sep_type = 0;
};

struct Unit {
  int id = 0;  // row/column/root id
  TokenRecord cls;
  std::vector<CellTokens> cells;
};

inline TokenRecord special_token(int id, std::string_view text) {
  TokenRecord r;
  r.token_id = id;
  r.text = std::string(text);
  return r;
}

inline std::string cell_key(const std::vector<TokenRecord>& tokens) {
  std::string key;
  for (const auto& t : tokens) {
    if (!key.empty()) key += ' ';
    key += t.text;
  }
  return key;
}

inline void set_coords(std::vector<TokenRecord>& toks, const BiCoordinate& c) {
  for (auto& t : toks) t.coord = c;
}

// Host-cell tokens followed by the nested table's header labels and data
// cells, all with the nested bit; capped at the in-cell position bound.
inline std::vector<TokenRecord> data_cell_tokens(const Table& t, int i, int j, SegmentKind seg,
                                                 const CoordinateMap& coords,
                                                 const Featurizer& fz) {
  const Cell& cell = t.data[i][j];
  const BiCoordinate host = coords.data[i][j];
  std::vector<TokenRecord> out = fz.tokenize_cell(cell);
  set_coords(out, host);
  if (cell.nested) {
    const Table& inner = *cell.nested;
    const NestedCoordinates& nc = coords.nested.at({i, j});
    auto append = [&](std::vector<TokenRecord> toks, CoordPair n) {
      BiCoordinate c = host;
      c.n = n;
      set_coords(toks, c);
      out.insert(out.end(), toks.begin(), toks.end());
    };
    for (int k = 0; k < inner.hmd.size(); ++k) {
      append(fz.tokenize_cell(Cell::string(inner.hmd.node(k).label), true), nc.hmd_nodes[k]);
    }
    for (int k = 0; k < inner.vmd.size(); ++k) {
      append(fz.tokenize_cell(Cell::string(inner.vmd.node(k).label), true), nc.vmd_nodes[k]);
    }
    if (seg == SegmentKind::kDataCol) {
      for (int c = 0; c < inner.cols(); ++c) {
        for (int r = 0; r < inner.rows(); ++r) append(fz.tokenize_cell(inner.data[r][c], true), nc.data[r][c]);
      }
    } else {
      for (int r = 0; r < inner.rows(); ++r) {
        for (int c = 0; c < inner.cols(); ++c) append(fz.tokenize_cell(inner.data[r][c], true), nc.data[r][c]);
      }
    }
  }
  if (static_cast<int>(out.size()) > kMaxCellTokens) out.resize(kMaxCellTokens);
  for (std::size_t k = 0; k < out.size(); ++k) out[k].in_pos = static_cast<int>(k);
  return out;
}

inline CellTokens make_data_cell(const Table& t, int i, int j, SegmentKind seg,
                                 const CoordinateMap& coords, const Featurizer& fz) {
  CellTokens ct;
  ct.tokens = data_cell_tokens(t, i, j, seg, coords, fz);
  ct.ref.row = i;
  ct.ref.col = j;
  ct.ref.nested = t.data[i][j].kind == CellKind::kNested;
  ct.sep_coord = coords.data[i][j];
  if (ct.ref.nested) ct.sep_feat[kNestedBit] = 1;
  ct.sep_type = infer_type(t.data[i][j], fz.types);
  return ct;
}

inline CellTokens make_header_cell(const HeaderTree& tree, int node, const BiCoordinate& coord,
                                   const Featurizer& fz) {
  CellTokens ct;
  Cell label = Cell::string(tree.node(node).label);
  ct.tokens = fz.tokenize_cell(label);
  set_coords(ct.tokens, coord);
  ct.ref.node = node;
  ct.ref.parent = tree.node(node).parent;
  for (int p = node; p >= 0; p = tree.node(p).parent) ct.ref.path.insert(ct.ref.path.begin(), p);
  ct.sep_coord = coord;
  ct.sep_type = infer_type(label, fz.types);
  return ct;
}

}  // namespace detail

// Serializes one segment of a table. Every unit (row, column or header
// forest) opens with [CLS] and every cell is closed by [SEP]; units are packed
// greedily into sequences of at most `max_len` tokens without splitting a cell.
inline std::vector<TokenSequence> build_sequences(const Table& table, SegmentKind segment,
                                                  const CoordinateMap& coords,
                                                  const Featurizer& fz,
                                                  int max_len = kMaxSequenceLength) {
  using detail::CellTokens;
  using detail::Unit;
  std::vector<Unit> units;

  switch (segment) {
    case SegmentKind::kDataRow:
      for (int i = 0; i < table.rows(); ++i) {
        Unit u;
        u.id = i;
        u.cls = detail::special_token(kClsId, "[CLS]");
        u.cls.coord.v = coords.data[i][0].v;
        for (int j = 0; j < table.cols(); ++j) {
          u.cells.push_back(detail::make_data_cell(table, i, j, segment, coords, fz));
        }
        units.push_back(std::move(u));
      }
      break;
    case SegmentKind::kDataCol:
      for (int j = 0; j < table.cols(); ++j) {
        Unit u;
        u.id = j;
        u.cls = detail::special_token(kClsId, "[CLS]");
        u.cls.coord.h = coords.data[0][j].h;
        for (int i = 0; i < table.rows(); ++i) {
          u.cells.push_back(detail::make_data_cell(table, i, j, segment, coords, fz));
        }
        units.push_back(std::move(u));
      }
      break;
    case SegmentKind::kHmd:
    case SegmentKind::kVmd: {
      const HeaderTree* tree = segment == SegmentKind::kHmd ? &table.hmd : &table.vmd;
      const auto& node_coords = segment == SegmentKind::kHmd ? coords.hmd_nodes : coords.vmd_nodes;
      if (tree->empty()) break;
      Unit u;
      u.id = 0;
      u.cls = detail::special_token(kClsId, "[CLS]");
      for (int k = 0; k < tree->size(); ++k) {
        u.cells.push_back(detail::make_header_cell(*tree, k, node_coords[k], fz));
      }
      units.push_back(std::move(u));
      break;
    }
  }

  // Cell pool for cloze distractors.
  auto pool = std::make_shared<std::vector<CellContent>>();
  for (auto& u : units) {
    for (auto& c : u.cells) {
      c.ref.pool_index = static_cast<int>(pool->size());
      pool->push_back({detail::cell_key(c.tokens), c.tokens});
    }
  }

  // Split oversized units at cell boundaries.
  std::vector<Unit> pieces;
  for (auto& u : units) {
    Unit cur{u.id, u.cls, {}};
    int len = 1;
    for (auto& c : u.cells) {
      const int need = static_cast<int>(c.tokens.size()) + 1;
      if (need + 1 > max_len) {
        throw CellTooLargeError("cell of " + std::to_string(need - 1) +
                                " tokens does not fit a sequence of " + std::to_string(max_len));
      }
      if (len + need > max_len) {
        pieces.push_back(std::move(cur));
        cur = Unit{u.id, u.cls, {}};
        len = 1;
      }
      cur.cells.push_back(std::move(c));
      len += need;
    }
    pieces.push_back(std::move(cur));
  }

  std::vector<TokenSequence> out;
  TokenSequence cur;
  int unit_counter = 0;
  auto flush = [&]() {
    if (cur.tokens.empty()) return;
    cur.visibility = build_visibility_matrix(cur);
    out.push_back(std::move(cur));
    cur = TokenSequence{};
    unit_counter = 0;
  };
  for (auto& p : pieces) {
    int len = 1;
    for (const auto& c : p.cells) len += static_cast<int>(c.tokens.size()) + 1;
    if (cur.size() + len > max_len) flush();
    if (cur.tokens.empty()) {
      cur.segment = segment;
      cur.table_id = table.source_id;
      cur.table_cells = pool;
    }
    const int unit = unit_counter++;
    cur.covered.push_back(p.id);
    cur.tokens.push_back(p.cls);
    cur.slots.push_back({SlotRole::kCls, unit, -1});
    for (auto& c : p.cells) {
      const int cell_index = static_cast<int>(cur.cells.size());
      cur.cells.push_back(c.ref);
      for (auto& t : c.tokens) {
        cur.tokens.push_back(t);
        cur.slots.push_back({SlotRole::kContent, unit, cell_index});
      }
      TokenRecord sep = detail::special_token(kSepId, "[SEP]");
      sep.coord = c.sep_coord;
      sep.feat = c.sep_feat;
      sep.type_id = c.sep_type;
      sep.in_pos = std::min<int>(static_cast<int>(c.tokens.size()), kMaxCellTokens - 1);
      cur.tokens.push_back(std::move(sep));
      cur.slots.push_back({SlotRole::kSep, unit, cell_index});
    }
  }
  flush();
  return out;
}

inline std::vector<TokenSequence> build_sequences(const Table& table, SegmentKind segment,
                                                  const Featurizer& fz,
                                                  int max_len = kMaxSequenceLength) {
  return build_sequences(table, segment, assign_coordinates(table), fz, max_len);
}

// "[CLS] caption [SEP]" as a single fully visible cell.
inline TokenSequence build_text_sequence(const std::string& text, const Featurizer& fz,
                                         SegmentKind segment = SegmentKind::kDataRow) {
  TokenSequence seq;
  seq.segment = segment;
  auto toks = fz.tokenize_cell(Cell::string(text));
  if (static_cast<int>(toks.size()) + 2 > kMaxSequenceLength) toks.resize(kMaxSequenceLength - 2);
  seq.tokens.push_back(detail::special_token(kClsId, "[CLS]"));
  seq.slots.push_back({SlotRole::kCls, 0, -1});
  CellRef ref;
  ref.row = 0;
  ref.col = 0;
  ref.pool_index = 0;
  seq.cells.push_back(ref);
  for (auto& t : toks) {
    seq.tokens.push_back(t);
    seq.slots.push_back({SlotRole::kContent, 0, 0});
  }
  TokenRecord sep = detail::special_token(kSepId, "[SEP]");
  sep.in_pos = std::min<int>(static_cast<int>(toks.size()), kMaxCellTokens - 1);
  seq.tokens.push_back(sep);
  seq.slots.push_back({SlotRole::kSep, 0, 0});
  seq.table_cells = std::make_shared<std::vector<CellContent>>(
      std::vector<CellContent>{{detail::cell_key(toks), toks}});
  seq.visibility = BinaryMatrix::ones(seq.size());
  return seq;
}

inline TokenSequence apply_ablation(TokenSequence seq, const AblationFlags& flags) {
  if (flags.no_visibility) seq.visibility = BinaryMatrix::ones(seq.size());
  for (auto& t : seq.tokens) {
    if (flags.no_type) t.type_id = 0;
    if (flags.no_units_nesting) t.feat = CellFeatures{};
    if (flags.no_bicoords) t.coord = BiCoordinate{};
  }
  return seq;
}

// One line of the inspection dump: tokens with coordinates and features,
// visibility as row-major run-length pairs [value, count].
inline nlohmann::json sequence_to_json(const TokenSequence& seq) {
  nlohmann::json toks = nlohmann::json::array();
  for (const auto& t : seq.tokens) {
    std::string feat;
    for (auto b : t.feat) feat += b ? '1' : '0';
    nlohmann::json j{{"id", t.token_id},
                     {"text", t.text},
                     {"in_pos", t.in_pos},
                     {"coord", {t.coord.v.row, t.coord.v.col, t.coord.h.row, t.coord.h.col,
                                t.coord.n.row, t.coord.n.col}},
                     {"feat", feat},
                     {"type", t.type_id}};
    if (t.num) j["num"] = {t.num->mag, t.num->pre, t.num->fst, t.num->lst};
    toks.push_back(std::move(j));
  }
  nlohmann::json rle = nlohmann::json::array();
  const auto& raw = seq.visibility.raw();
  for (std::size_t i = 0; i < raw.size();) {
    std::size_t j = i;
    while (j < raw.size() && raw[j] == raw[i]) ++j;
    rle.push_back({raw[i], j - i});
    i = j;
  }
  return {{"table_id", seq.table_id},
          {"segment", std::string(to_string(seq.segment))},
          {"covered", seq.covered},
          {"tokens", std::move(toks)},
          {"visibility", {{"n", seq.size()}, {"rle", std::move(rle)}}}};
}

}  // namespace tabbin

#endif  // TABBIN_SEQUENCE_HPP_
