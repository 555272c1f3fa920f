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

#ifndef TABBIN_FEATURIZER_HPP_
#define TABBIN_FEATURIZER_HPP_

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabbin/errors.hpp"
#include "tabbin/table.hpp"

namespace tabbin {

inline constexpr int kPadId = 0;
inline constexpr int kClsId = 1;
inline constexpr int kSepId = 2;
inline constexpr int kValId = 3;
inline constexpr int kMaskId = 4;
inline constexpr int kUnkId = 5;
inline constexpr int kNumReserved = 6;

inline constexpr int kNumberFeatureClip = 10;  // M = P = F = L
inline constexpr int kNumberFeatureRows = kNumberFeatureClip + 1;
inline constexpr int kMaxCellTokens = 64;      // I
inline constexpr int kNumTypes = 14;           // T
inline constexpr int kNumCellFeatures = 8;     // F

// Bit order of the unit/nesting feature vector.
enum class UnitClass { kStats, kLength, kWeight, kCapacity, kTime, kTemperature, kPressure };
inline constexpr int kNumUnitClasses = 7;
inline constexpr int kNestedBit = 7;

inline constexpr std::array<std::string_view, kNumUnitClasses> kUnitClassNames = {
    "stats", "length", "weight", "capacity", "time", "temperature", "pressure"};

inline std::string_view to_string(UnitClass u) { return kUnitClassNames[static_cast<int>(u)]; }

inline std::optional<UnitClass> unit_class_from_string(std::string_view s) {
  for (int i = 0; i < kNumUnitClasses; ++i) {
    if (kUnitClassNames[i] == s) return static_cast<UnitClass>(i);
  }
  return std::nullopt;
}

struct NumberFeatures {
  int mag = 0;
  int pre = 0;
  int fst = 0;
  int lst = 0;
  friend bool operator==(const NumberFeatures&, const NumberFeatures&) = default;
};

using CellFeatures = std::array<std::uint8_t, kNumCellFeatures>;

struct TokenRecord {
  int token_id = kPadId;
  bool is_number = false;
  std::optional<NumberFeatures> num;
  int in_pos = 0;
  BiCoordinate coord;
  CellFeatures feat{};
  int type_id = 0;
  std::string text;  // surface form, for inspection only

  friend bool operator==(const TokenRecord&, const TokenRecord&) = default;
};

// ---------------------------------------------------------------------------
// Number features.

// Digit-level features of a written decimal: integer-part digit count,
// fraction digit count, leading significant digit, trailing written digit.
inline NumberFeatures number_features(std::string_view literal) {
  std::string_view s = literal;
  if (!s.empty() && (s.front() == '-' || s.front() == '+')) s.remove_prefix(1);
  auto dot = s.find('.');
  std::string_view int_part = s.substr(0, dot);
  std::string_view frac_part = dot == std::string_view::npos ? std::string_view{} : s.substr(dot + 1);
  while (int_part.size() > 1 && int_part.front() == '0') int_part.remove_prefix(1);

  NumberFeatures f;
  f.mag = std::min<int>(std::max<int>(1, static_cast<int>(int_part.size())), kNumberFeatureClip);
  f.pre = std::min<int>(static_cast<int>(frac_part.size()), kNumberFeatureClip);
  f.fst = 0;
  for (char c : s) {
    if (c >= '1' && c <= '9') {
      f.fst = c - '0';
      break;
    }
  }
  f.lst = 0;
  for (auto it = s.rbegin(); it != s.rend(); ++it) {
    if (*it >= '0' && *it <= '9') {
      f.lst = *it - '0';
      break;
    }
  }
  return f;
}

inline NumberFeatures number_features(double x) {
  return number_features(decimal_from_double(x).literal);
}

// ---------------------------------------------------------------------------
// Basic tokenizer: lowercased words, single punctuation marks and numeric
// literals. Multi-byte UTF-8 sequences are word characters except for a few
// separators.

struct Piece {
  enum class Kind { kWord, kPunct, kNumber };
  Kind kind;
  std::string text;
};

namespace detail {

inline constexpr std::array<std::string_view, 4> kUtf8Separators = {"±", "–", "—", "×"};

inline std::size_t utf8_separator_at(std::string_view s, std::size_t i) {
  for (auto sep : kUtf8Separators) {
    if (s.substr(i, sep.size()) == sep) return sep.size();
  }
  return 0;
}

inline bool is_word_byte(unsigned char c) {
  return std::isalnum(c) || c == '_' || c >= 0x80;
}

}  // namespace detail

inline std::vector<Piece> basic_tokenize(std::string_view text) {
  std::vector<Piece> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto digit = [&](std::size_t k) { return k < n && std::isdigit(static_cast<unsigned char>(text[k])); };
  while (i < n) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    const bool sign_ok = out.empty() || out.back().kind == Piece::Kind::kPunct;
    if (digit(i) || ((c == '-' || c == '+') && digit(i + 1) && sign_ok &&
                     (i == 0 || std::isspace(static_cast<unsigned char>(text[i - 1]))))) {
      std::size_t j = i + 1;
      while (digit(j)) ++j;
      if (j < n && text[j] == '.' && digit(j + 1)) {
        ++j;
        while (digit(j)) ++j;
      }
      out.push_back({Piece::Kind::kNumber, std::string(text.substr(i, j - i))});
      i = j;
      continue;
    }
    if (std::size_t len = detail::utf8_separator_at(text, i)) {
      out.push_back({Piece::Kind::kPunct, std::string(text.substr(i, len))});
      i += len;
      continue;
    }
    if (detail::is_word_byte(c)) {
      std::size_t j = i;
      while (j < n && detail::is_word_byte(static_cast<unsigned char>(text[j])) &&
             !detail::utf8_separator_at(text, j)) {
        ++j;
      }
      std::string w(text.substr(i, j - i));
      for (auto& ch : w) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      out.push_back({Piece::Kind::kWord, std::move(w)});
      i = j;
      continue;
    }
    out.push_back({Piece::Kind::kPunct, std::string(1, static_cast<char>(c))});
    ++i;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary.

class Vocabulary {
 public:
  Vocabulary() {
    for (auto t : {"[PAD]", "[CLS]", "[SEP]", "[VAL]", "[MASK]", "[UNK]"}) add(t);
  }

  // Words ordered by descending count then lexicographically. With
  // `subwords`, every seen character is also added as a word-initial piece
  // and as a "##" continuation piece so unseen words decompose greedily.
  static Vocabulary build(const std::map<std::string, int>& counts, int max_words,
                          int min_count = 1, bool subwords = true) {
    Vocabulary v;
    std::vector<std::pair<std::string, int>> words(counts.begin(), counts.end());
    std::stable_sort(words.begin(), words.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    int added = 0;
    for (const auto& [w, c] : words) {
      if (c < min_count || added >= max_words) break;
      if (!v.contains(w)) {
        v.add(w);
        ++added;
      }
    }
    if (subwords) {
      std::set<std::string> chars;
      for (const auto& [w, _] : counts) {
        for (std::size_t i = 0; i < w.size();) {
          std::size_t len = utf8_len(static_cast<unsigned char>(w[i]));
          chars.insert(w.substr(i, len));
          i += len;
        }
      }
      for (const auto& ch : chars) {
        if (!v.contains(ch)) v.add(ch);
        if (!v.contains("##" + ch)) v.add("##" + ch);
      }
    }
    return v;
  }

  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    Vocabulary v;
    if (tokens.size() < kNumReserved) throw FormatError("vocabulary lacks reserved tokens");
    for (std::size_t i = 0; i < kNumReserved; ++i) {
      if (tokens[i] != v.tokens_[i]) throw FormatError("reserved token mismatch at id " + std::to_string(i));
    }
    for (std::size_t i = kNumReserved; i < tokens.size(); ++i) v.add(tokens[i]);
    return v;
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  bool contains(const std::string& t) const { return ids_.count(t) > 0; }
  const std::string& token(int id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  int id(const std::string& t) const {
    auto it = ids_.find(t);
    return it == ids_.end() ? kUnkId : it->second;
  }

  // Whole-word id if known, else greedy longest-match wordpieces, else [UNK].
  std::vector<int> encode_word(const std::string& word) const {
    if (auto it = ids_.find(word); it != ids_.end()) return {it->second};
    std::vector<int> pieces;
    std::size_t start = 0;
    while (start < word.size()) {
      int found = -1;
      std::size_t end = word.size();
      for (; end > start; --end) {
        std::string sub = word.substr(start, end - start);
        if (start > 0) sub = "##" + sub;
        if (auto it = ids_.find(sub); it != ids_.end()) {
          found = it->second;
          break;
        }
      }
      if (found < 0) return {kUnkId};
      pieces.push_back(found);
      start = end;
    }
    return pieces;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  static std::size_t utf8_len(unsigned char c) {
    if (c < 0x80) return 1;
    if ((c >> 5) == 0x6) return 2;
    if ((c >> 4) == 0xE) return 3;
    if ((c >> 3) == 0x1E) return 4;
    return 1;
  }

  void add(const std::string& t) {
    ids_.emplace(t, static_cast<int>(tokens_.size()));
    tokens_.push_back(t);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// ---------------------------------------------------------------------------
// Unit and type dictionaries.

class UnitDictionary {
 public:
  static UnitDictionary defaults() {
    UnitDictionary d;
    d.add(UnitClass::kStats, {"%", "mean", "percent", "median", "sd"});
    d.add(UnitClass::kLength, {"m", "cm", "mm", "km", "in"});
    d.add(UnitClass::kWeight, {"kg", "g", "mg", "lb"});
    d.add(UnitClass::kCapacity, {"l", "ml"});
    d.add(UnitClass::kTime, {"s", "sec", "min", "hour", "day", "week", "month", "year"});
    d.add(UnitClass::kTemperature, {"°c", "°f", "k"});
    d.add(UnitClass::kPressure, {"pa", "mmhg", "bar"});
    return d;
  }

  static UnitDictionary from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("unit dictionary must be an object");
    UnitDictionary d;
    for (const auto& [cls, forms] : j.items()) {
      auto u = unit_class_from_string(cls);
      if (!u) throw ConfigError("unknown unit class '" + cls + "'");
      if (!forms.is_array()) throw ConfigError("unit forms must be an array");
      d.add(*u, forms.get<std::vector<std::string>>());
    }
    return d;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [form, cls] : forms_) j[std::string(to_string(cls))].push_back(form);
    return j;
  }

  // Exact match on the lowercased surface, then with a plural "s" removed.
  std::optional<UnitClass> lookup(std::string surface) const {
    for (auto& c : surface) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (auto it = forms_.find(surface); it != forms_.end()) return it->second;
    if (surface.size() > 2 && surface.back() == 's') {
      if (auto it = forms_.find(surface.substr(0, surface.size() - 1)); it != forms_.end()) {
        return it->second;
      }
    }
    return std::nullopt;
  }

  friend bool operator==(const UnitDictionary&, const UnitDictionary&) = default;

 private:
  void add(UnitClass cls, const std::vector<std::string>& forms) {
    for (auto f : forms) {
      for (auto& c : f) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      forms_[f] = cls;
    }
  }

  std::map<std::string, UnitClass> forms_;
};

class TypeDictionary {
 public:
  static TypeDictionary defaults() {
    nlohmann::json j{
        {"type_names",
         {"text", "numeric", "range", "name", "place", "measurement", "disease", "drug",
          "organization", "date", "symptom", "treatment", "vaccine", "gene"}},
        {"entries",
         {{"colon", "disease"}, {"rectal", "disease"}, {"cancer", "disease"},
          {"colorectal cancer", "disease"}, {"covid-19", "disease"}, {"covid", "disease"},
          {"bevacizumab", "drug"}, {"ifl", "treatment"}, {"fluorouracil", "drug"},
          {"florida", "place"}, {"texas", "place"}, {"new york", "place"},
          {"fever", "symptom"}, {"cough", "symptom"}, {"moderna", "vaccine"},
          {"covaxin", "vaccine"}, {"kras", "gene"}, {"braf", "gene"}}}};
    return from_json(j);
  }

  static TypeDictionary from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("type_names") || !j["type_names"].is_array()) {
      throw ConfigError("type dictionary needs a 'type_names' array");
    }
    TypeDictionary d;
    d.names_ = j["type_names"].get<std::vector<std::string>>();
    if (static_cast<int>(d.names_.size()) != kNumTypes) {
      throw ConfigError("type dictionary must define exactly " + std::to_string(kNumTypes) +
                        " types, got " + std::to_string(d.names_.size()));
    }
    for (auto required : {"text", "numeric", "range"}) {
      if (d.index_of(required) < 0) throw ConfigError(std::string("type dictionary lacks '") + required + "'");
    }
    if (j.contains("entries")) {
      for (const auto& [surface, type] : j["entries"].items()) {
        int idx = d.index_of(type.get<std::string>());
        if (idx < 0) throw ConfigError("entry '" + surface + "' has unknown type " + type.dump());
        std::string key;
        for (const auto& p : basic_tokenize(surface)) key += (key.empty() ? "" : " ") + p.text;
        d.entries_[key] = idx;
        d.max_words_ = std::max<int>(d.max_words_, static_cast<int>(basic_tokenize(surface).size()));
      }
    }
    return d;
  }

  nlohmann::json to_json() const {
    nlohmann::json entries = nlohmann::json::object();
    for (const auto& [k, v] : entries_) entries[k] = names_[v];
    return {{"type_names", names_}, {"entries", entries}};
  }

  int index_of(std::string_view name) const {
    for (int i = 0; i < static_cast<int>(names_.size()); ++i) {
      if (names_[i] == name) return i;
    }
    return -1;
  }

  const std::vector<std::string>& names() const { return names_; }

  // Longest (then leftmost) run of pieces present in the dictionary.
  std::optional<int> longest_match(const std::vector<Piece>& pieces) const {
    const int n = static_cast<int>(pieces.size());
    for (int len = std::min(n, max_words_); len >= 1; --len) {
      for (int s = 0; s + len <= n; ++s) {
        std::string key;
        for (int k = s; k < s + len; ++k) key += (k == s ? "" : " ") + pieces[k].text;
        if (auto it = entries_.find(key); it != entries_.end()) return it->second;
      }
    }
    return std::nullopt;
  }

  friend bool operator==(const TypeDictionary&, const TypeDictionary&) = default;

 private:
  std::vector<std::string> names_;
  std::map<std::string, int> entries_;
  int max_words_ = 1;
};

// ---------------------------------------------------------------------------
// Cell-level analysis.

namespace detail {

inline const std::regex& number_regex() {
  static const std::regex re(
      R"(^\s*[<>~]?\s*[+-]?\d+(\.\d+)?(\s*±\s*\d+(\.\d+)?)?\s*(%|[^\d\s]{1,12})?\s*$)");
  return re;
}

inline const std::regex& range_regex() {
  static const std::regex re(
      R"(^\s*[+-]?\d+(\.\d+)?\s*(-|–|to)\s*[+-]?\d+(\.\d+)?\s*(%|[^\d\s]{1,12})?\s*$)");
  return re;
}

}  // namespace detail

// Unit class from the cell's explicit unit, else from the first word or
// symbol of its text matching the dictionary. Gaussian cells are stats.
inline std::optional<UnitClass> detect_unit(const Cell& cell, const UnitDictionary& units) {
  if (cell.kind == CellKind::kGaussian) return UnitClass::kStats;
  if (cell.unit) {
    if (auto u = units.lookup(*cell.unit)) return u;
    return unit_class_from_string(*cell.unit);
  }
  for (const auto& p : basic_tokenize(cell.text)) {
    if (p.kind == Piece::Kind::kNumber) continue;
    if (auto u = units.lookup(p.text)) return u;
  }
  return std::nullopt;
}

inline int infer_type(const Cell& cell, const TypeDictionary& types) {
  if (cell.kind == CellKind::kRange || std::regex_match(cell.text, detail::range_regex())) {
    return types.index_of("range");
  }
  if (cell.kind == CellKind::kNumber || cell.kind == CellKind::kGaussian ||
      std::regex_match(cell.text, detail::number_regex())) {
    return types.index_of("numeric");
  }
  if (auto t = types.longest_match(basic_tokenize(cell.text))) return *t;
  return types.index_of("text");
}

struct Featurizer {
  Vocabulary vocab;
  UnitDictionary units = UnitDictionary::defaults();
  TypeDictionary types = TypeDictionary::defaults();

  bool is_numeric_cell(const Cell& cell) const {
    if (cell.kind == CellKind::kNumber || cell.kind == CellKind::kRange ||
        cell.kind == CellKind::kGaussian) {
      return true;
    }
    if (cell.kind != CellKind::kString) return false;
    int t = infer_type(cell, types);
    return t == types.index_of("numeric") || t == types.index_of("range");
  }

  // Tokens of the cell's own text (nested content is handled by the
  // sequence builder). Coordinates are left at their defaults.
  std::vector<TokenRecord> tokenize_cell(const Cell& cell, bool inside_nested = false) const {
    auto pieces = basic_tokenize(cell.text);
    std::vector<const Piece*> kept;
    int literals_seen = 0;
    bool has_literal = false;
    for (const auto& p : pieces) has_literal |= p.kind == Piece::Kind::kNumber;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      const Piece& p = pieces[i];
      if (p.kind == Piece::Kind::kNumber) {
        ++literals_seen;
        if (cell.kind == CellKind::kGaussian && literals_seen > 1) continue;  // sd
      } else if (p.kind == Piece::Kind::kPunct || p.text == "to") {
        const bool between_literals = i > 0 && i + 1 < pieces.size() &&
                                      pieces[i - 1].kind == Piece::Kind::kNumber &&
                                      pieces[i + 1].kind == Piece::Kind::kNumber;
        if (cell.kind == CellKind::kRange && between_literals && literals_seen == 1) continue;
        if (cell.kind == CellKind::kGaussian && p.text == "±") continue;
      }
      kept.push_back(&p);
    }

    std::vector<Piece> leading;
    if (!has_literal) {
      if (cell.number) leading.push_back({Piece::Kind::kNumber, cell.number->literal});
      if (cell.range) {
        leading.push_back({Piece::Kind::kNumber, cell.range->lo.literal});
        leading.push_back({Piece::Kind::kNumber, cell.range->hi.literal});
      }
      if (cell.gaussian) leading.push_back({Piece::Kind::kNumber, cell.gaussian->mean.literal});
      if (cell.unit && cell.text.empty()) leading.push_back({Piece::Kind::kWord, *cell.unit});
    }

    CellFeatures feat{};
    const bool numeric = is_numeric_cell(cell);
    if (numeric) {
      if (auto u = detect_unit(cell, units)) feat[static_cast<int>(*u)] = 1;
    }
    if (inside_nested || cell.kind == CellKind::kNested) feat[kNestedBit] = 1;
    const int type_id = infer_type(cell, types);

    std::vector<TokenRecord> out;
    auto emit = [&](const Piece& p) {
      if (p.kind == Piece::Kind::kNumber) {
        TokenRecord r;
        r.token_id = kValId;
        r.is_number = true;
        r.num = number_features(p.text);
        r.text = p.text;
        out.push_back(std::move(r));
        return;
      }
      for (int id : vocab.encode_word(p.text)) {
        TokenRecord r;
        r.token_id = id;
        r.text = id == kUnkId ? p.text : vocab.token(id);
        out.push_back(std::move(r));
      }
    };
    for (const auto& p : leading) emit(p);
    for (const Piece* p : kept) emit(*p);
    if (static_cast<int>(out.size()) > kMaxCellTokens) out.resize(kMaxCellTokens);
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i].in_pos = static_cast<int>(i);
      out[i].feat = feat;
      out[i].type_id = type_id;
    }
    return out;
  }
};

// Word and punctuation counts over captions, header labels and cell texts,
// including nested tables. Numeric literals are excluded.
inline void count_words(const Table& t, std::map<std::string, int>& counts) {
  auto add_text = [&](const std::string& s) {
    for (const auto& p : basic_tokenize(s)) {
      if (p.kind != Piece::Kind::kNumber) ++counts[p.text];
    }
  };
  add_text(t.caption);
  for (const auto& n : t.hmd.nodes()) add_text(n.label);
  for (const auto& n : t.vmd.nodes()) add_text(n.label);
  for (const auto& row : t.data) {
    for (const auto& c : row) {
      add_text(c.text);
      if (c.unit && c.text.empty()) add_text(*c.unit);
      if (c.nested) count_words(*c.nested, counts);
    }
  }
}

inline Vocabulary build_vocabulary(const std::vector<Table>& corpus, int max_words = 30000,
                                   int min_count = 1, bool subwords = true) {
  std::map<std::string, int> counts;
  for (const auto& t : corpus) count_words(t, counts);
  return Vocabulary::build(counts, max_words, min_count, subwords);
}

}  // namespace tabbin

#endif  // TABBIN_FEATURIZER_HPP_
