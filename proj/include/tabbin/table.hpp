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

// In-memory model of tables with bi-dimensional hierarchical metadata and
// nesting: a caption, a horizontal header tree (HMD) over the columns, an
// optional vertical header tree (VMD) over the rows, and a rectangular grid
// of typed data cells. Also the canonical "tabjson/1" reader/writer and the
// bi-dimensional coordinate assignment.

#ifndef TABBIN_TABLE_HPP_
#define TABBIN_TABLE_HPP_

#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabbin/errors.hpp"

namespace tabbin {

using json = nlohmann::json;

inline constexpr std::string_view kTableFormat = "tabjson/1";
inline constexpr int kDefaultPositionBound = 256;  // G

// A decimal as written in the source document. `literal` is the written form
// used for digit-level features; `value` the parsed magnitude.
struct Decimal {
  enum class Source { kInteger, kFloat, kString };

  double value = 0.0;
  std::string literal = "0";
  Source source = Source::kInteger;

  friend bool operator==(const Decimal& a, const Decimal& b) {
    return a.literal == b.literal && a.source == b.source;
  }
};

namespace detail {

inline std::string shortest_literal(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, res.ptr);
  if (s.find_first_of("eE") != std::string::npos) {
    res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed);
    s.assign(buf, res.ptr);
  }
  return s;
}

}  // namespace detail

inline Decimal decimal_from_string(std::string_view text) {
  static const std::regex kDecimal(R"(^[+-]?\d+(\.\d+)?$)");
  std::string s(text);
  if (!std::regex_match(s, kDecimal)) {
    throw ValueError("malformed decimal '" + s + "'");
  }
  Decimal d;
  d.literal = s;
  d.source = Decimal::Source::kString;
  d.value = std::strtod(s.c_str(), nullptr);
  return d;
}

inline Decimal decimal_from_double(double v) {
  if (!std::isfinite(v)) throw ValueError("non-finite decimal");
  Decimal d;
  d.value = v;
  d.literal = detail::shortest_literal(v);
  d.source = Decimal::Source::kFloat;
  return d;
}

inline Decimal decimal_from_integer(std::int64_t v) {
  Decimal d;
  d.value = static_cast<double>(v);
  d.literal = std::to_string(v);
  d.source = Decimal::Source::kInteger;
  return d;
}

inline Decimal decimal_from_json(const json& j) {
  if (j.is_number_integer()) return decimal_from_integer(j.get<std::int64_t>());
  if (j.is_number_float()) return decimal_from_double(j.get<double>());
  if (j.is_string()) return decimal_from_string(j.get<std::string>());
  throw ValueError("decimal must be a JSON number or a decimal string");
}

inline json decimal_to_json(const Decimal& d) {
  switch (d.source) {
    case Decimal::Source::kInteger:
      return static_cast<std::int64_t>(d.value);
    case Decimal::Source::kFloat:
      return d.value;
    case Decimal::Source::kString:
      return d.literal;
  }
  return d.literal;
}

// ---------------------------------------------------------------------------
// Header trees.

// Recursive description used to build a HeaderTree.
struct HeaderSpec {
  std::string label;
  std::vector<HeaderSpec> children;
};

// Nodes are stored flat in preorder. Depth is 1 for roots; leaf_index is the
// 1-based enumeration of leaves in preorder (left-to-right for HMD,
// top-to-bottom for VMD) and 0 for internal nodes; rank is the 1-based index
// of the node among nodes of the same depth, in preorder.
struct HeaderNode {
  std::string label;
  int parent = -1;
  std::vector<int> children;
  int depth = 1;
  int leaf_index = 0;
  int rank = 1;

  bool is_leaf() const { return children.empty(); }
};

class HeaderTree {
 public:
  HeaderTree() = default;

  explicit HeaderTree(const std::vector<HeaderSpec>& roots) {
    for (const auto& r : roots) roots_.push_back(add(r, -1, 1));
    std::map<int, int> seen_at_depth;
    int leaf = 0;
    for (auto& n : nodes_) {
      n.rank = ++seen_at_depth[n.depth];
      if (n.is_leaf()) n.leaf_index = ++leaf;
    }
    for (int i = 0; i < static_cast<int>(nodes_.size()); ++i) {
      if (nodes_[i].is_leaf()) leaves_.push_back(i);
    }
  }

  // One root per label, depth 1.
  static HeaderTree flat(const std::vector<std::string>& labels) {
    std::vector<HeaderSpec> specs;
    for (const auto& l : labels) specs.push_back({l, {}});
    return HeaderTree(specs);
  }

  bool empty() const { return nodes_.empty(); }
  int size() const { return static_cast<int>(nodes_.size()); }
  int leaf_count() const { return static_cast<int>(leaves_.size()); }
  const std::vector<HeaderNode>& nodes() const { return nodes_; }
  const HeaderNode& node(int id) const { return nodes_.at(id); }
  const std::vector<int>& roots() const { return roots_; }

  // Node id of the leaf with the given 1-based leaf index.
  int leaf_node(int leaf_index) const { return leaves_.at(leaf_index - 1); }

  int max_depth() const {
    int d = 0;
    for (const auto& n : nodes_) d = std::max(d, n.depth);
    return d;
  }

  bool is_ancestor(int ancestor, int node) const {
    for (int p = nodes_.at(node).parent; p >= 0; p = nodes_[p].parent) {
      if (p == ancestor) return true;
    }
    return false;
  }

  // Id of the root whose subtree contains `node`.
  int root_of(int node) const {
    while (nodes_.at(node).parent >= 0) node = nodes_[node].parent;
    return node;
  }

  std::vector<HeaderSpec> to_specs() const {
    std::vector<HeaderSpec> out;
    for (int r : roots_) out.push_back(spec_of(r));
    return out;
  }

  friend bool operator==(const HeaderTree& a, const HeaderTree& b) {
    if (a.nodes_.size() != b.nodes_.size()) return false;
    for (std::size_t i = 0; i < a.nodes_.size(); ++i) {
      if (a.nodes_[i].label != b.nodes_[i].label ||
          a.nodes_[i].parent != b.nodes_[i].parent) {
        return false;
      }
    }
    return true;
  }

 private:
  int add(const HeaderSpec& spec, int parent, int depth) {
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back({spec.label, parent, {}, depth, 0, 1});
    for (const auto& c : spec.children) {
      int child = add(c, id, depth + 1);
      nodes_[id].children.push_back(child);
    }
    return id;
  }

  HeaderSpec spec_of(int id) const {
    HeaderSpec s{nodes_[id].label, {}};
    for (int c : nodes_[id].children) s.children.push_back(spec_of(c));
    return s;
  }

  std::vector<HeaderNode> nodes_;
  std::vector<int> roots_;
  std::vector<int> leaves_;
};

// ---------------------------------------------------------------------------
// Cells and tables.

enum class CellKind { kString, kNumber, kRange, kGaussian, kNested, kEmpty };

inline std::string_view to_string(CellKind k) {
  switch (k) {
    case CellKind::kString: return "string";
    case CellKind::kNumber: return "number";
    case CellKind::kRange: return "range";
    case CellKind::kGaussian: return "gaussian";
    case CellKind::kNested: return "nested";
    case CellKind::kEmpty: return "empty";
  }
  return "?";
}

inline CellKind cell_kind_from_string(std::string_view s) {
  if (s == "string") return CellKind::kString;
  if (s == "number") return CellKind::kNumber;
  if (s == "range") return CellKind::kRange;
  if (s == "gaussian") return CellKind::kGaussian;
  if (s == "nested") return CellKind::kNested;
  if (s == "empty") return CellKind::kEmpty;
  throw SchemaError("unknown cell kind '" + std::string(s) + "'");
}

struct Table;

struct Interval {
  Decimal lo;
  Decimal hi;
  friend bool operator==(const Interval&, const Interval&) = default;
};

struct Gaussian {
  Decimal mean;
  Decimal sd;
  friend bool operator==(const Gaussian&, const Gaussian&) = default;
};

struct Cell {
  CellKind kind = CellKind::kEmpty;
  std::string text;
  std::optional<Decimal> number;
  std::optional<Interval> range;
  std::optional<Gaussian> gaussian;
  std::optional<std::string> unit;   // surface form, e.g. "months"
  std::shared_ptr<const Table> nested;

  static Cell string(std::string text) {
    Cell c;
    c.kind = CellKind::kString;
    c.text = std::move(text);
    return c;
  }
  static Cell empty() { return Cell{}; }
};

bool operator==(const Cell& a, const Cell& b);

struct Table {
  std::string caption;
  HeaderTree hmd;
  HeaderTree vmd;
  std::vector<std::vector<Cell>> data;
  std::string source_id;

  int rows() const { return static_cast<int>(data.size()); }
  int cols() const { return hmd.leaf_count(); }
  const Cell& cell(int row, int col) const { return data.at(row).at(col); }

  friend bool operator==(const Table& a, const Table& b) {
    return a.caption == b.caption && a.hmd == b.hmd && a.vmd == b.vmd &&
           a.data == b.data && a.source_id == b.source_id;
  }
};

inline bool operator==(const Cell& a, const Cell& b) {
  if (a.kind != b.kind || a.text != b.text || a.number != b.number ||
      a.range != b.range || a.gaussian != b.gaussian || a.unit != b.unit) {
    return false;
  }
  if (static_cast<bool>(a.nested) != static_cast<bool>(b.nested)) return false;
  return !a.nested || *a.nested == *b.nested;
}

// Throws SchemaError/ShapeError/ValueError on violation of any table, header
// tree or cell invariant.
inline void validate_table(const Table& t, bool is_nested = false) {
  if (t.hmd.leaf_count() < 1) throw ShapeError("hmd must have at least one leaf");
  if (t.data.empty()) {
    throw ShapeError("data grid has no rows");
  }
  const int m = t.hmd.leaf_count();
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    if (static_cast<int>(t.data[i].size()) != m) {
      throw ShapeError("row " + std::to_string(i + 1) + " has " +
                       std::to_string(t.data[i].size()) + " cells, expected " +
                       std::to_string(m));
    }
  }
  if (!t.vmd.empty() && t.vmd.leaf_count() != t.rows()) {
    throw ShapeError("vmd has " + std::to_string(t.vmd.leaf_count()) +
                     " leaves but the grid has " + std::to_string(t.rows()) +
                     " rows");
  }
  for (const auto& row : t.data) {
    for (const auto& c : row) {
      const bool want_number = c.kind == CellKind::kNumber;
      const bool want_range = c.kind == CellKind::kRange;
      const bool want_gauss = c.kind == CellKind::kGaussian;
      const bool want_nested = c.kind == CellKind::kNested;
      if (c.number.has_value() != want_number ||
          c.range.has_value() != want_range ||
          c.gaussian.has_value() != want_gauss ||
          static_cast<bool>(c.nested) != want_nested) {
        throw SchemaError("cell fields do not match kind '" +
                          std::string(to_string(c.kind)) + "'");
      }
      if (c.unit && !(want_number || want_range || want_gauss)) {
        throw SchemaError("unit only allowed on numeric cells");
      }
      if (c.range && c.range->lo.value > c.range->hi.value) {
        throw ValueError("range lo > hi in '" + c.text + "'");
      }
      if (c.gaussian && c.gaussian->sd.value < 0) {
        throw ValueError("negative gaussian sd in '" + c.text + "'");
      }
      if (c.nested) {
        if (is_nested) throw ShapeError("nested tables may not contain nested tables");
        validate_table(*c.nested, true);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// tabjson/1 reader and writer.

namespace detail {

inline void check_keys(const json& obj, std::initializer_list<std::string_view> required,
                       std::initializer_list<std::string_view> optional,
                       std::string_view what) {
  if (!obj.is_object()) throw SchemaError(std::string(what) + " must be an object");
  for (auto key : required) {
    if (!obj.contains(std::string(key))) {
      throw SchemaError(std::string(what) + " is missing field '" + std::string(key) + "'");
    }
  }
  for (const auto& [key, _] : obj.items()) {
    bool known = false;
    for (auto k : required) known |= key == k;
    for (auto k : optional) known |= key == k;
    if (!known) throw SchemaError(std::string(what) + " has unknown field '" + key + "'");
  }
}

inline std::vector<HeaderSpec> header_specs_from_json(const json& arr) {
  if (!arr.is_array()) throw SchemaError("header tree must be an array");
  std::vector<HeaderSpec> out;
  for (const auto& node : arr) {
    check_keys(node, {"label"}, {"children"}, "header node");
    if (!node["label"].is_string()) throw SchemaError("header label must be a string");
    HeaderSpec s{node["label"].get<std::string>(), {}};
    if (node.contains("children")) s.children = header_specs_from_json(node["children"]);
    out.push_back(std::move(s));
  }
  return out;
}

inline json header_specs_to_json(const std::vector<HeaderSpec>& specs) {
  json arr = json::array();
  for (const auto& s : specs) {
    arr.push_back({{"label", s.label}, {"children", header_specs_to_json(s.children)}});
  }
  return arr;
}

inline std::pair<Decimal, Decimal> decimal_pair(const json& j, std::string_view what) {
  if (!j.is_array() || j.size() != 2) {
    throw SchemaError(std::string(what) + " must be a two-element array");
  }
  return {decimal_from_json(j[0]), decimal_from_json(j[1])};
}

}  // namespace detail

inline Table table_from_json(const json& j, bool is_nested = false);

inline Cell cell_from_json(const json& j, bool in_nested) {
  detail::check_keys(j, {"kind", "text"},
                     {"number", "range", "gaussian", "unit", "nested"}, "cell");
  if (!j["text"].is_string()) throw SchemaError("cell text must be a string");
  Cell c;
  c.kind = cell_kind_from_string(j["kind"].get<std::string>());
  c.text = j["text"].get<std::string>();
  if (j.contains("number")) c.number = decimal_from_json(j["number"]);
  if (j.contains("range")) {
    auto [lo, hi] = detail::decimal_pair(j["range"], "range");
    c.range = Interval{lo, hi};
  }
  if (j.contains("gaussian")) {
    auto [mean, sd] = detail::decimal_pair(j["gaussian"], "gaussian");
    c.gaussian = Gaussian{mean, sd};
  }
  if (j.contains("unit")) {
    if (!j["unit"].is_string()) throw SchemaError("unit must be a string");
    c.unit = j["unit"].get<std::string>();
  }
  if (j.contains("nested")) {
    if (in_nested) throw ShapeError("nested tables may not contain nested tables");
    c.nested = std::make_shared<const Table>(table_from_json(j["nested"], true));
  }
  return c;
}

inline Table table_from_json(const json& j, bool is_nested) {
  detail::check_keys(j, {"caption", "hmd", "vmd", "data"}, {"version", "source_id"},
                     "table");
  if (j.contains("version")) {
    if (j["version"] != kTableFormat) {
      throw SchemaError("unsupported table version " + j["version"].dump());
    }
  } else if (!is_nested) {
    throw SchemaError("table is missing field 'version'");
  }
  if (!j["caption"].is_string()) throw SchemaError("caption must be a string");
  Table t;
  t.caption = j["caption"].get<std::string>();
  t.hmd = HeaderTree(detail::header_specs_from_json(j["hmd"]));
  t.vmd = HeaderTree(detail::header_specs_from_json(j["vmd"]));
  if (j.contains("source_id")) {
    if (!j["source_id"].is_string()) throw SchemaError("source_id must be a string");
    t.source_id = j["source_id"].get<std::string>();
  }
  if (!j["data"].is_array()) throw SchemaError("data must be an array of rows");
  for (const auto& row : j["data"]) {
    if (!row.is_array()) throw SchemaError("data row must be an array");
    std::vector<Cell> cells;
    for (const auto& cell : row) cells.push_back(cell_from_json(cell, is_nested));
    t.data.push_back(std::move(cells));
  }
  validate_table(t, is_nested);
  return t;
}

inline json table_to_json(const Table& t, bool is_nested = false);

inline json cell_to_json(const Cell& c) {
  json j{{"kind", std::string(to_string(c.kind))}, {"text", c.text}};
  if (c.number) j["number"] = decimal_to_json(*c.number);
  if (c.range) j["range"] = {decimal_to_json(c.range->lo), decimal_to_json(c.range->hi)};
  if (c.gaussian) {
    j["gaussian"] = {decimal_to_json(c.gaussian->mean), decimal_to_json(c.gaussian->sd)};
  }
  if (c.unit) j["unit"] = *c.unit;
  if (c.nested) j["nested"] = table_to_json(*c.nested, true);
  return j;
}

inline json table_to_json(const Table& t, bool is_nested) {
  json j{{"caption", t.caption},
         {"hmd", detail::header_specs_to_json(t.hmd.to_specs())},
         {"vmd", detail::header_specs_to_json(t.vmd.to_specs())}};
  if (!is_nested) j["version"] = std::string(kTableFormat);
  if (!t.source_id.empty()) j["source_id"] = t.source_id;
  json data = json::array();
  for (const auto& row : t.data) {
    json r = json::array();
    for (const auto& c : row) r.push_back(cell_to_json(c));
    data.push_back(std::move(r));
  }
  j["data"] = std::move(data);
  return j;
}

inline Table parse_table(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("invalid JSON: ") + e.what());
  }
  return table_from_json(j);
}

inline std::string serialize_table(const Table& t) { return table_to_json(t).dump(); }

// True iff the table is in first normal form with a flat header row.
inline bool is_relational(const Table& t) {
  if (!t.vmd.empty() || t.hmd.max_depth() != 1) return false;
  for (const auto& row : t.data) {
    for (const auto& c : row) {
      if (c.kind == CellKind::kNested) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Bi-dimensional coordinates.

struct CoordPair {
  int row = 0;
  int col = 0;
  friend bool operator==(const CoordPair&, const CoordPair&) = default;
};

// Vertical, horizontal and nested position of a token.
struct BiCoordinate {
  CoordPair v;
  CoordPair h;
  CoordPair n;
  friend bool operator==(const BiCoordinate&, const BiCoordinate&) = default;
};

// Coordinates of the parts of a table nested inside a host cell. The nested
// grid is laid out with its header rows/columns first, so a nested data cell
// (r, c) sits at (hmd depth + r, vmd depth + c).
struct NestedCoordinates {
  std::vector<std::vector<CoordPair>> data;
  std::vector<CoordPair> hmd_nodes;
  std::vector<CoordPair> vmd_nodes;
};

struct CoordinateMap {
  std::vector<std::vector<BiCoordinate>> data;  // rows x cols, 0-based
  std::vector<BiCoordinate> hmd_nodes;          // by HeaderTree node id
  std::vector<BiCoordinate> vmd_nodes;
  std::map<std::pair<int, int>, NestedCoordinates> nested;  // by host (row, col)
};

namespace detail {

inline void check_bound(const CoordPair& p, int bound) {
  if (p.row < 0 || p.col < 0 || p.row >= bound || p.col >= bound) {
    throw OverflowError("coordinate (" + std::to_string(p.row) + "," +
                        std::to_string(p.col) + ") exceeds position bound " +
                        std::to_string(bound));
  }
}

inline NestedCoordinates nested_coordinates(const Table& t) {
  NestedCoordinates out;
  const int hd = t.hmd.max_depth();
  const int vd = t.vmd.empty() ? 0 : t.vmd.max_depth();
  for (const auto& node : t.hmd.nodes()) out.hmd_nodes.push_back({node.depth, vd + node.rank});
  for (const auto& node : t.vmd.nodes()) out.vmd_nodes.push_back({hd + node.rank, node.depth});
  for (int r = 0; r < t.rows(); ++r) {
    std::vector<CoordPair> row;
    for (int c = 0; c < t.cols(); ++c) row.push_back({hd + r + 1, vd + c + 1});
    out.data.push_back(std::move(row));
  }
  return out;
}

}  // namespace detail

// Data cell (i, j) gets h = (depth of HMD leaf j, j) and v = (depth of VMD
// leaf i, i), or v = (0, i) without VMD; indices are 1-based. Header nodes get
// (depth, rank) on their own axis and (0, 0) on the other.
inline CoordinateMap assign_coordinates(const Table& t, int bound = kDefaultPositionBound) {
  CoordinateMap map;
  for (int i = 0; i < t.rows(); ++i) {
    std::vector<BiCoordinate> row;
    for (int j = 0; j < t.cols(); ++j) {
      BiCoordinate c;
      c.h = {t.hmd.node(t.hmd.leaf_node(j + 1)).depth, j + 1};
      c.v = t.vmd.empty() ? CoordPair{0, i + 1}
                          : CoordPair{t.vmd.node(t.vmd.leaf_node(i + 1)).depth, i + 1};
      detail::check_bound(c.h, bound);
      detail::check_bound(c.v, bound);
      row.push_back(c);
      if (t.data[i][j].nested) {
        auto nested = detail::nested_coordinates(*t.data[i][j].nested);
        for (const auto& r : nested.data) for (const auto& p : r) detail::check_bound(p, bound);
        for (const auto& p : nested.hmd_nodes) detail::check_bound(p, bound);
        for (const auto& p : nested.vmd_nodes) detail::check_bound(p, bound);
        map.nested.emplace(std::make_pair(i, j), std::move(nested));
      }
    }
    map.data.push_back(std::move(row));
  }
  for (const auto& node : t.hmd.nodes()) {
    BiCoordinate c;
    c.h = {node.depth, node.rank};
    detail::check_bound(c.h, bound);
    map.hmd_nodes.push_back(c);
  }
  for (const auto& node : t.vmd.nodes()) {
    BiCoordinate c;
    c.v = {node.depth, node.rank};
    detail::check_bound(c.v, bound);
    map.vmd_nodes.push_back(c);
  }
  return map;
}

}  // namespace tabbin

#endif  // TABBIN_TABLE_HPP_
