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

// Seeded synthetic corpus of BiN tables with topic, column-template and
// entity-type ground truth.

#ifndef TABBIN_CORPUS_HPP_
#define TABBIN_CORPUS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabbin/bundle.hpp"
#include "tabbin/errors.hpp"
#include "tabbin/eval.hpp"
#include "tabbin/featurizer.hpp"
#include "tabbin/table.hpp"

namespace tabbin {

enum class ColumnKind { kEntity, kNumber, kRange, kGaussian };

struct ColumnTemplate {
  std::string id;          // unique within the topic
  std::string header;
  ColumnKind kind = ColumnKind::kEntity;
  std::string entity;      // entity type label (entity columns)
  std::string type_name;   // type dictionary class for the values, may be empty
  std::vector<std::string> values;
  double lo = 0.0, hi = 1.0;  // numeric columns
  int decimals = 0;
  std::string unit;
};

struct Topic {
  std::string name;
  std::vector<std::string> caption_words;
  std::vector<std::string> groups;       // labels for upper header levels
  std::vector<std::string> row_labels;   // vertical header leaves
  std::vector<ColumnTemplate> columns;
};

namespace detail {

inline ColumnTemplate entity(std::string id, std::string header, std::string ent, std::string type,
                             std::vector<std::string> values) {
  ColumnTemplate c;
  c.id = std::move(id);
  c.header = std::move(header);
  c.kind = ColumnKind::kEntity;
  c.entity = std::move(ent);
  c.type_name = std::move(type);
  c.values = std::move(values);
  return c;
}

inline ColumnTemplate numeric(std::string id, std::string header, ColumnKind kind, double lo, double hi,
                              int decimals, std::string unit) {
  ColumnTemplate c;
  c.id = std::move(id);
  c.header = std::move(header);
  c.kind = kind;
  c.lo = lo;
  c.hi = hi;
  c.decimals = decimals;
  c.unit = std::move(unit);
  return c;
}

}  // namespace detail

inline std::vector<Topic> builtin_topics() {
  using detail::entity;
  using detail::numeric;
  const auto N = ColumnKind::kNumber, R = ColumnKind::kRange, G = ColumnKind::kGaussian;
  std::vector<Topic> t;
  t.push_back({"oncology",
               {"colorectal", "cancer", "trial", "outcomes", "chemotherapy", "cohort"},
               {"treatment", "outcomes", "patients", "efficacy"},
               {"arm", "cohort", "phase", "stage", "line"},
               {entity("drug", "drug", "drug", "drug",
                       {"bevacizumab", "fluorouracil", "irinotecan", "oxaliplatin", "cetuximab", "panitumumab",
                        "capecitabine", "leucovorin", "regorafenib", "aflibercept"}),
                entity("site", "cancer site", "disease", "disease",
                       {"colon", "rectal", "gastric", "pancreatic", "hepatic", "ovarian", "breast", "lung",
                        "prostate", "esophageal"}),
                entity("regimen", "regimen", "regimen", "treatment",
                       {"ifl", "folfox", "folfiri", "capox", "xelox", "flox", "folfoxiri", "saltz", "mayo",
                        "roswell"}),
                entity("gene", "mutation", "gene", "gene",
                       {"kras", "braf", "nras", "egfr", "her2", "tp53", "apc", "pik3ca", "smad4", "msi"}),
                numeric("os", "os", N, 5, 40, 1, "months"),
                numeric("pfs", "pfs", N, 2, 20, 1, "months"),
                numeric("rr", "response rate", N, 10, 70, 0, "%"),
                numeric("age", "age", R, 20, 80, 0, "years"),
                numeric("dose", "dose", G, 50, 400, 1, "mg")}});
  t.push_back({"covid",
               {"covid-19", "vaccination", "pandemic", "symptoms", "surveillance", "report"},
               {"vaccine", "cases", "clinical", "population"},
               {"week", "county", "region", "wave", "site"},
               {entity("vaccine", "vaccine", "vaccine", "vaccine",
                       {"moderna", "pfizer", "covaxin", "novavax", "sputnik", "sinovac", "sinopharm", "janssen",
                        "astrazeneca", "medicago"}),
                entity("symptom", "symptom", "symptom", "symptom",
                       {"fever", "cough", "fatigue", "headache", "anosmia", "dyspnea", "myalgia", "chills",
                        "nausea", "diarrhea"}),
                entity("state", "state", "state", "place",
                       {"florida", "texas", "ohio", "georgia", "arizona", "nevada", "oregon", "utah", "iowa",
                        "kansas"}),
                entity("antiviral", "therapy", "antiviral", "drug",
                       {"remdesivir", "dexamethasone", "baricitinib", "tocilizumab", "molnupiravir", "paxlovid",
                        "favipiravir", "sotrovimab", "heparin", "ribavirin"}),
                numeric("efficacy", "efficacy", N, 50, 95, 1, "%"),
                numeric("cases", "cases", N, 100, 90000, 0, ""),
                numeric("agegroup", "age group", R, 0, 90, 0, "years"),
                numeric("volume", "dose volume", N, 0.25, 1.0, 2, "ml"),
                numeric("incubation", "incubation", N, 2, 14, 0, "days")}});
  t.push_back({"cities",
               {"european", "cities", "municipal", "census", "geography", "capitals"},
               {"location", "demographics", "climate", "history"},
               {"district", "quarter", "zone", "borough", "ward"},
               {entity("city", "city", "city", "place",
                       {"paris", "lyon", "madrid", "lisbon", "berlin", "vienna", "prague", "warsaw", "dublin",
                        "oslo"}),
                entity("country", "country", "country", "place",
                       {"france", "spain", "portugal", "germany", "austria", "czechia", "poland", "ireland",
                        "norway", "sweden"}),
                entity("mayor", "mayor", "person", "name",
                       {"hidalgo", "almeida", "giffey", "ludwig", "hrib", "trzaskowski", "gilliland", "johansen",
                        "moedas", "doucet"}),
                entity("river", "river", "river", "place",
                       {"seine", "rhone", "tagus", "spree", "danube", "vltava", "vistula", "liffey", "akerselva",
                        "manzanares"}),
                numeric("population", "population", N, 50000, 3500000, 0, ""),
                numeric("area", "area", N, 40, 900, 1, "km"),
                numeric("elevation", "elevation", N, 2, 700, 0, "m"),
                numeric("temp", "temperature", R, -5, 30, 0, "°c"),
                numeric("founded", "founded", N, 800, 1700, 0, "")}});
  t.push_back({"music",
               {"album", "releases", "discography", "songs", "charts", "records"},
               {"release", "artist", "sales", "performance"},
               {"side", "disc", "set", "session", "volume"},
               {entity("artist", "artist", "musician", "name",
                       {"coltrane", "davis", "holiday", "fitzgerald", "marley", "hendrix", "joplin", "franklin",
                        "cash", "simone"}),
                entity("genre", "genre", "genre", "",
                       {"jazz", "blues", "rock", "reggae", "techno", "folk", "soul", "funk", "punk", "swing"}),
                entity("label", "label", "label", "organization",
                       {"motown", "atlantic", "columbia", "capitol", "stax", "verve", "chess", "island", "decca",
                        "impulse"}),
                entity("instrument", "instrument", "instrument", "",
                       {"saxophone", "trumpet", "guitar", "piano", "drums", "bass", "violin", "organ", "clarinet",
                        "harmonica"}),
                numeric("duration", "duration", N, 2, 12, 2, "min"),
                numeric("year", "released", N, 1950, 1999, 0, ""),
                numeric("tempo", "tempo", R, 60, 180, 0, "bpm"),
                numeric("rating", "rating", G, 1, 5, 1, ""),
                numeric("weeks", "weeks on chart", N, 1, 60, 0, "weeks")}});
  t.push_back({"soccer",
               {"football", "league", "season", "standings", "clubs", "fixtures"},
               {"club", "record", "finance", "squad"},
               {"round", "matchday", "fixture", "leg", "group"},
               {entity("club", "club", "club", "organization",
                       {"arsenal", "chelsea", "juventus", "benfica", "ajax", "celtic", "porto", "napoli",
                        "valencia", "feyenoord"}),
                entity("coach", "coach", "coach", "name",
                       {"arteta", "pochettino", "allegri", "schmidt", "tenhag", "rodgers", "conceicao", "spalletti",
                        "baraja", "slot"}),
                entity("position", "position", "position", "",
                       {"goalkeeper", "defender", "midfielder", "striker", "winger", "sweeper", "fullback",
                        "playmaker", "libero", "stopper"}),
                entity("stadium", "stadium", "stadium", "place",
                       {"emirates", "stamford", "allianz", "luz", "arena", "parkhead", "dragao", "maradona",
                        "mestalla", "kuip"}),
                numeric("capacity", "capacity", N, 15000, 80000, 0, ""),
                numeric("points", "points", N, 10, 95, 0, ""),
                numeric("goals", "goals", N, 0, 110, 0, ""),
                numeric("ticket", "ticket price", R, 20, 150, 0, "eur"),
                numeric("distance", "distance covered", N, 95, 125, 1, "km")}});
  t.push_back({"weather",
               {"meteorological", "station", "observations", "climate", "daily", "readings"},
               {"conditions", "precipitation", "wind", "atmosphere"},
               {"hour", "day", "station", "sensor", "interval"},
               {entity("station", "station", "station", "place",
                       {"heathrow", "schiphol", "tegel", "orly", "barajas", "fiumicino", "kastrup", "arlanda",
                        "gardermoen", "vantaa"}),
                entity("condition", "condition", "condition", "",
                       {"sunny", "overcast", "drizzle", "thunderstorm", "fog", "sleet", "hail", "snow", "mist",
                        "showers"}),
                entity("wind_dir", "wind direction", "direction", "",
                       {"north", "south", "east", "west", "northeast", "northwest", "southeast", "southwest",
                        "variable", "calm"}),
                numeric("pressure", "pressure", N, 980, 1040, 1, "mbar"),
                numeric("rain", "rainfall", N, 0, 60, 1, "mm"),
                numeric("temp_w", "temperature", R, -10, 35, 0, "°c"),
                numeric("humidity", "humidity", N, 20, 100, 0, "%"),
                numeric("wind", "wind speed", G, 0, 90, 1, "km"),
                numeric("sunshine", "sunshine", N, 0, 14, 1, "hours")}});
  return t;
}

inline nlohmann::json to_json(const ColumnTemplate& c) {
  static const char* kinds[] = {"entity", "number", "range", "gaussian"};
  nlohmann::json j{{"id", c.id}, {"header", c.header}, {"kind", kinds[static_cast<int>(c.kind)]}};
  if (c.kind == ColumnKind::kEntity) {
    j["entity"] = c.entity;
    j["type_name"] = c.type_name;
    j["values"] = c.values;
  } else {
    j["lo"] = c.lo;
    j["hi"] = c.hi;
    j["decimals"] = c.decimals;
    j["unit"] = c.unit;
  }
  return j;
}

inline ColumnTemplate column_template_from_json(const nlohmann::json& j) {
  ColumnTemplate c;
  c.id = j.at("id");
  c.header = j.at("header");
  const std::string kind = j.at("kind");
  if (kind == "entity") {
    c.kind = ColumnKind::kEntity;
    c.entity = j.at("entity");
    c.type_name = j.value("type_name", "");
    c.values = j.at("values").get<std::vector<std::string>>();
    if (c.values.empty()) throw ConfigError("entity column '" + c.id + "' has no values");
  } else {
    if (kind == "number") c.kind = ColumnKind::kNumber;
    else if (kind == "range") c.kind = ColumnKind::kRange;
    else if (kind == "gaussian") c.kind = ColumnKind::kGaussian;
    else throw ConfigError("unknown column kind '" + kind + "'");
    c.lo = j.at("lo");
    c.hi = j.at("hi");
    c.decimals = j.value("decimals", 0);
    c.unit = j.value("unit", "");
    if (c.lo > c.hi) throw ConfigError("column '" + c.id + "' has lo > hi");
  }
  return c;
}

inline nlohmann::json to_json(const Topic& t) {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : t.columns) cols.push_back(to_json(c));
  return {{"name", t.name}, {"caption_words", t.caption_words}, {"groups", t.groups},
          {"row_labels", t.row_labels}, {"columns", cols}};
}

inline Topic topic_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    for (auto& t : builtin_topics()) {
      if (t.name == j.get<std::string>()) return t;
    }
    throw ConfigError("unknown built-in topic " + j.dump());
  }
  Topic t;
  t.name = j.at("name");
  t.caption_words = j.at("caption_words").get<std::vector<std::string>>();
  t.groups = j.value("groups", std::vector<std::string>{"group"});
  t.row_labels = j.value("row_labels", std::vector<std::string>{"row"});
  for (const auto& c : j.at("columns")) t.columns.push_back(column_template_from_json(c));
  if (t.columns.empty() || t.caption_words.empty() || t.groups.empty() || t.row_labels.empty()) {
    throw ConfigError("topic '" + t.name + "' is incomplete");
  }
  return t;
}

struct CorpusSpec {
  int n_tables = 200;
  std::vector<Topic> topics = builtin_topics();
  double fraction_nonrelational = 0.4;
  double fraction_nested = 0.1;
  double fraction_numeric = 0.4;  // expected share of numeric columns
  double fraction_empty = 0.02;   // empty data cells
  int min_rows = 6, max_rows = 18;
  int min_cols = 8, max_cols = 12;
  int hmd_depth_min = 1, hmd_depth_max = 3;
  int vmd_depth_min = 1, vmd_depth_max = 2;
  std::uint64_t seed = 0;

  void validate() const {
    auto frac = [](double f, const char* name) {
      if (!(f >= 0.0 && f <= 1.0)) throw ConfigError(std::string(name) + " must be in [0, 1]");
    };
    frac(fraction_nonrelational, "fraction_nonrelational");
    frac(fraction_nested, "fraction_nested");
    frac(fraction_numeric, "fraction_numeric");
    frac(fraction_empty, "fraction_empty");
    if (n_tables < 1) throw ConfigError("n_tables must be >= 1");
    if (topics.empty()) throw ConfigError("corpus needs at least one topic");
    for (const auto& t : topics) {
      if (t.columns.empty()) throw ConfigError("topic '" + t.name + "' has no column templates");
    }
    if (min_rows < 1 || max_rows < min_rows) throw ConfigError("bad row range");
    if (min_cols < 1 || max_cols < min_cols) throw ConfigError("bad column range");
    if (hmd_depth_min < 1 || hmd_depth_max < hmd_depth_min) throw ConfigError("bad hmd depth range");
    if (vmd_depth_min < 1 || vmd_depth_max < vmd_depth_min) throw ConfigError("bad vmd depth range");
  }
};

inline nlohmann::json to_json(const CorpusSpec& s) {
  nlohmann::json topics = nlohmann::json::array();
  for (const auto& t : s.topics) topics.push_back(to_json(t));
  return {{"n_tables", s.n_tables},
          {"topics", topics},
          {"fraction_nonrelational", s.fraction_nonrelational},
          {"fraction_nested", s.fraction_nested},
          {"fraction_numeric", s.fraction_numeric},
          {"fraction_empty", s.fraction_empty},
          {"rows", {s.min_rows, s.max_rows}},
          {"cols", {s.min_cols, s.max_cols}},
          {"hmd_depth", {s.hmd_depth_min, s.hmd_depth_max}},
          {"vmd_depth", {s.vmd_depth_min, s.vmd_depth_max}},
          {"seed", s.seed}};
}

// Unknown keys are rejected. "topics" holds built-in names or full topic
// objects; "n_topics" takes the first n built-ins.
inline CorpusSpec corpus_spec_from_json(const nlohmann::json& j, CorpusSpec s = {}) {
  static const std::set<std::string> known = {
      "n_tables", "topics", "n_topics", "fraction_nonrelational", "fraction_nested", "fraction_numeric",
      "fraction_empty", "rows", "cols", "hmd_depth", "vmd_depth", "seed"};
  for (const auto& [k, _] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown corpus spec key '" + k + "'");
  }
  auto pair = [&](const char* key, int& lo, int& hi) {
    if (!j.contains(key)) return;
    const auto& v = j[key];
    if (!v.is_array() || v.size() != 2) throw ConfigError(std::string(key) + " must be [min, max]");
    lo = v[0];
    hi = v[1];
  };
  s.n_tables = j.value("n_tables", s.n_tables);
  if (j.contains("topics")) {
    s.topics.clear();
    for (const auto& t : j["topics"]) s.topics.push_back(topic_from_json(t));
  }
  if (j.contains("n_topics")) {
    const int n = j["n_topics"];
    auto all = builtin_topics();
    if (n < 1 || n > static_cast<int>(all.size())) {
      throw ConfigError("n_topics must be in [1, " + std::to_string(all.size()) + "]");
    }
    s.topics.assign(all.begin(), all.begin() + n);
  }
  s.fraction_nonrelational = j.value("fraction_nonrelational", s.fraction_nonrelational);
  s.fraction_nested = j.value("fraction_nested", s.fraction_nested);
  s.fraction_numeric = j.value("fraction_numeric", s.fraction_numeric);
  s.fraction_empty = j.value("fraction_empty", s.fraction_empty);
  pair("rows", s.min_rows, s.max_rows);
  pair("cols", s.min_cols, s.max_cols);
  pair("hmd_depth", s.hmd_depth_min, s.hmd_depth_max);
  pair("vmd_depth", s.vmd_depth_min, s.vmd_depth_max);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

struct GeneratedCorpus {
  std::vector<Table> tables;
  GroundTruth tc;  // table id -> topic
  GroundTruth cc;  // column id -> topic.template
  GroundTruth ec;  // entity value -> entity type
};

// Default type dictionary extended with the typed entity values of the topics.
inline TypeDictionary corpus_type_dictionary(const std::vector<Topic>& topics) {
  auto j = TypeDictionary::defaults().to_json();
  for (const auto& t : topics) {
    for (const auto& c : t.columns) {
      if (c.kind != ColumnKind::kEntity || c.type_name.empty()) continue;
      for (const auto& v : c.values) j["entries"][v] = c.type_name;
    }
  }
  return TypeDictionary::from_json(j);
}

namespace detail {

inline std::string format_fixed(double v, int decimals) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(decimals) << v;
  std::string s = ss.str();
  if (s == "-0" || s.rfind("-0.", 0) == 0) {
    bool all_zero = s.find_first_not_of("-0.") == std::string::npos;
    if (all_zero) s = s.substr(1);
  }
  return s;
}

inline double draw(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

inline Cell make_cell(const ColumnTemplate& c, Rng& rng) {
  Cell cell;
  const std::string unit_suffix = c.unit.empty() ? "" : (c.unit == "%" ? "%" : " " + c.unit);
  switch (c.kind) {
    case ColumnKind::kEntity:
      cell = Cell::string(c.values[rng.below(c.values.size())]);
      break;
    case ColumnKind::kNumber: {
      const std::string lit = format_fixed(draw(rng, c.lo, c.hi), c.decimals);
      cell.kind = CellKind::kNumber;
      cell.number = decimal_from_string(lit);
      cell.text = lit + unit_suffix;
      break;
    }
    case ColumnKind::kRange: {
      double a = draw(rng, c.lo, c.hi), b = draw(rng, c.lo, c.hi);
      if (a > b) std::swap(a, b);
      const std::string la = format_fixed(a, c.decimals), lb = format_fixed(b, c.decimals);
      cell.kind = CellKind::kRange;
      cell.range = Interval{decimal_from_string(la), decimal_from_string(lb)};
      if (cell.range->lo.value > cell.range->hi.value) std::swap(cell.range->lo, cell.range->hi);
      cell.text = cell.range->lo.literal + "-" + cell.range->hi.literal + unit_suffix;
      break;
    }
    case ColumnKind::kGaussian: {
      const std::string mean = format_fixed(draw(rng, c.lo, c.hi), c.decimals);
      const std::string sd = format_fixed(draw(rng, 0.0, (c.hi - c.lo) / 10.0), c.decimals);
      cell.kind = CellKind::kGaussian;
      cell.gaussian = Gaussian{decimal_from_string(mean), decimal_from_string(sd)};
      cell.text = mean + " ± " + sd + unit_suffix;
      break;
    }
  }
  if (c.kind != ColumnKind::kEntity && !c.unit.empty()) cell.unit = c.unit;
  return cell;
}

template <class V>
const auto& pick(const V& v, Rng& rng) {
  return v[rng.below(v.size())];
}

// Groups `n` consecutive leaves under `levels` extra header levels.
inline std::vector<HeaderSpec> group_leaves(std::vector<HeaderSpec> leaves, int levels,
                                            const std::vector<std::string>& labels, Rng& rng) {
  for (int l = 0; l < levels; ++l) {
    std::vector<HeaderSpec> up;
    std::size_t i = 0;
    while (i < leaves.size()) {
      const std::size_t span = std::min<std::size_t>(leaves.size() - i, 1 + rng.below(3));
      HeaderSpec g{pick(labels, rng), {}};
      for (std::size_t k = 0; k < span; ++k) g.children.push_back(std::move(leaves[i + k]));
      up.push_back(std::move(g));
      i += span;
    }
    leaves = std::move(up);
  }
  return leaves;
}

inline std::shared_ptr<const Table> make_nested(const Topic& topic, Rng& rng) {
  std::vector<const ColumnTemplate*> numeric;
  for (const auto& c : topic.columns) {
    if (c.kind == ColumnKind::kNumber) numeric.push_back(&c);
  }
  if (numeric.empty()) {
    for (const auto& c : topic.columns) numeric.push_back(&c);
  }
  auto t = std::make_shared<Table>();
  const int cols = 2;
  std::vector<const ColumnTemplate*> chosen;
  for (int j = 0; j < cols; ++j) chosen.push_back(pick(numeric, rng));
  std::vector<std::string> labels;
  for (auto* c : chosen) labels.push_back(c->header);
  t->hmd = HeaderTree::flat(labels);
  const int rows = 1 + static_cast<int>(rng.below(2));
  for (int i = 0; i < rows; ++i) {
    std::vector<Cell> row;
    for (auto* c : chosen) row.push_back(make_cell(*c, rng));
    t->data.push_back(std::move(row));
  }
  return t;
}

}  // namespace detail

// Relational tables have a flat HMD, no VMD and no nesting; the others get a
// multi-level HMD and a VMD. Nested cells only go into non-relational tables.
inline GeneratedCorpus generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  GeneratedCorpus out;
  const int width = std::max(4, static_cast<int>(std::to_string(spec.n_tables - 1).size()));
  const double nested_given_nonrel =
      spec.fraction_nonrelational > 0.0 ? std::min(1.0, spec.fraction_nested / spec.fraction_nonrelational) : 0.0;
  for (int n = 0; n < spec.n_tables; ++n) {
    Rng rng = Rng::derive(spec.seed, 0xC0, static_cast<std::uint64_t>(n));
    const Topic& topic = spec.topics[static_cast<std::size_t>(n) % spec.topics.size()];
    const bool nonrel = rng.bernoulli(spec.fraction_nonrelational);
    const bool nested = nonrel && rng.bernoulli(nested_given_nonrel);
    const int rows = spec.min_rows + static_cast<int>(rng.below(spec.max_rows - spec.min_rows + 1));
    const int cols = spec.min_cols + static_cast<int>(rng.below(spec.max_cols - spec.min_cols + 1));

    std::vector<int> ent, num;
    for (int c = 0; c < static_cast<int>(topic.columns.size()); ++c) {
      (topic.columns[c].kind == ColumnKind::kEntity ? ent : num).push_back(c);
    }
    rng.shuffle(ent);
    rng.shuffle(num);
    std::vector<int> chosen;
    std::size_t ei = 0, ni = 0;
    for (int j = 0; j < cols; ++j) {
      const bool want_num = !num.empty() && (ent.empty() || rng.bernoulli(spec.fraction_numeric));
      auto& pool = want_num ? num : ent;
      auto& idx = want_num ? ni : ei;
      chosen.push_back(idx < pool.size() ? pool[idx] : pool[rng.below(pool.size())]);
      ++idx;
    }

    Table t;
    std::ostringstream id;
    id << "t" << std::setw(width) << std::setfill('0') << n;
    t.source_id = id.str();
    std::vector<std::string> cap;
    for (int w = 0; w < 3; ++w) cap.push_back(detail::pick(topic.caption_words, rng));
    t.caption = cap[0] + " " + cap[1] + " " + cap[2];

    std::vector<HeaderSpec> leaves;
    for (int c : chosen) leaves.push_back({topic.columns[c].header, {}});
    if (nonrel) {
      const int depth = std::max(2, spec.hmd_depth_min +
                                        static_cast<int>(rng.below(spec.hmd_depth_max - spec.hmd_depth_min + 1)));
      t.hmd = HeaderTree(detail::group_leaves(std::move(leaves), depth - 1, topic.groups, rng));
      const int vdepth =
          spec.vmd_depth_min + static_cast<int>(rng.below(spec.vmd_depth_max - spec.vmd_depth_min + 1));
      std::vector<HeaderSpec> vleaves;
      const std::string& base = detail::pick(topic.row_labels, rng);
      for (int i = 0; i < rows; ++i) vleaves.push_back({base + " " + std::to_string(i + 1), {}});
      t.vmd = HeaderTree(detail::group_leaves(std::move(vleaves), vdepth - 1, topic.groups, rng));
    } else {
      t.hmd = HeaderTree(leaves);
    }

    for (int i = 0; i < rows; ++i) {
      std::vector<Cell> row;
      for (int c : chosen) {
        if (rng.bernoulli(spec.fraction_empty)) {
          row.push_back(Cell::empty());
        } else {
          row.push_back(detail::make_cell(topic.columns[c], rng));
        }
      }
      t.data.push_back(std::move(row));
    }
    if (nested) {
      const int i = static_cast<int>(rng.below(rows));
      const int j = static_cast<int>(rng.below(cols));
      Cell host;
      host.kind = CellKind::kNested;
      host.nested = detail::make_nested(topic, rng);
      t.data[i][j] = std::move(host);
    }
    validate_table(t);

    out.tc[t.source_id] = topic.name;
    for (int j = 0; j < cols; ++j) {
      const ColumnTemplate& c = topic.columns[chosen[j]];
      out.cc[column_id(t, j)] = topic.name + "." + c.id;
      if (c.kind != ColumnKind::kEntity) continue;
      for (int i = 0; i < rows; ++i) {
        if (t.data[i][j].kind == CellKind::kString) out.ec[t.data[i][j].text] = c.entity;
      }
    }
    out.tables.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus directories: tables/<id>.json, truth_{tc,cc,ec}.csv, types.json and
// spec.json.

struct CorpusFiles {
  std::vector<Table> tables;
  GroundTruth tc, cc, ec;
  std::optional<TypeDictionary> types;
};

inline void write_corpus(const std::filesystem::path& dir, const GeneratedCorpus& c, const CorpusSpec& spec,
                         const nlohmann::json& provenance = nlohmann::json::object()) {
  std::filesystem::create_directories(dir / "tables");
  for (const auto& t : c.tables) write_file_atomic(dir / "tables" / (t.source_id + ".json"), serialize_table(t));
  write_file_atomic(dir / "truth_tc.csv", ground_truth_csv(c.tc));
  write_file_atomic(dir / "truth_cc.csv", ground_truth_csv(c.cc));
  write_file_atomic(dir / "truth_ec.csv", ground_truth_csv(c.ec));
  write_file_atomic(dir / "types.json", corpus_type_dictionary(spec.topics).to_json().dump(2));
  nlohmann::json meta{{"spec", to_json(spec)}, {"run", provenance}};
  write_file_atomic(dir / "spec.json", meta.dump(2));
}

// Tables in file-name order. A directory without tables/ is read as a flat
// directory of table files.
inline CorpusFiles read_corpus(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("corpus directory " + dir.string() + " does not exist");
  CorpusFiles out;
  const fs::path tables = fs::is_directory(dir / "tables") ? dir / "tables" : dir;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(tables)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && e.path().extension() == ".json" && name != "types.json" && name != "spec.json") {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    try {
      Table t = parse_table(read_file(f));
      if (t.source_id.empty()) t.source_id = f.stem().string();
      out.tables.push_back(std::move(t));
    } catch (const ValidationError& e) {
      throw SchemaError(f.string() + ": " + e.what());
    }
  }
  auto truth = [&](const char* name, GroundTruth& g) {
    if (fs::exists(dir / name)) g = parse_ground_truth_csv(read_file(dir / name));
  };
  truth("truth_tc.csv", out.tc);
  truth("truth_cc.csv", out.cc);
  truth("truth_ec.csv", out.ec);
  if (fs::exists(dir / "types.json")) out.types = TypeDictionary::from_json(nlohmann::json::parse(read_file(dir / "types.json")));
  return out;
}

}  // namespace tabbin

#endif  // TABBIN_CORPUS_HPP_
