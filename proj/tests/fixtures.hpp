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

// Hand-built tables shared by the test suites.

#ifndef TABBIN_TESTS_FIXTURES_HPP_
#define TABBIN_TESTS_FIXTURES_HPP_

#include <memory>
#include <string>
#include <vector>

#include "tabbin/corpus.hpp"
#include "tabbin/table.hpp"

namespace tabbin::testing {

inline Cell number_cell(const std::string& literal, const std::string& text,
                        std::optional<std::string> unit = std::nullopt) {
  Cell c;
  c.kind = CellKind::kNumber;
  c.number = decimal_from_string(literal);
  c.text = text;
  c.unit = std::move(unit);
  return c;
}

inline Cell range_cell(const std::string& lo, const std::string& hi, const std::string& text,
                       std::optional<std::string> unit = std::nullopt) {
  Cell c;
  c.kind = CellKind::kRange;
  c.range = Interval{decimal_from_string(lo), decimal_from_string(hi)};
  c.text = text;
  c.unit = std::move(unit);
  return c;
}

// Name / Age / Job with Sam, John and Nick.
inline Table people_table() {
  Table t;
  t.caption = "people";
  t.source_id = "people";
  t.hmd = HeaderTree::flat({"Name", "Age", "Job"});
  t.data = {{Cell::string("Sam"), number_cell("24", "24"), Cell::string("Engineer")},
            {Cell::string("John"), number_cell("25", "25"), Cell::string("Scientist")},
            {Cell::string("Nick"), number_cell("23", "23"), Cell::string("Lawyer")}};
  return t;
}

inline const char* kPeopleJson = R"({
  "version": "tabjson/1", "caption": "people", "source_id": "people",
  "hmd": [{"label": "Name"}, {"label": "Age"}, {"label": "Job"}],
  "vmd": [],
  "data": [
    [{"kind": "string", "text": "Sam"}, {"kind": "number", "text": "24", "number": 24},
     {"kind": "string", "text": "Engineer"}],
    [{"kind": "string", "text": "John"}, {"kind": "number", "text": "25", "number": 25},
     {"kind": "string", "text": "Scientist"}],
    [{"kind": "string", "text": "Nick"}, {"kind": "number", "text": "23", "number": 23},
     {"kind": "string", "text": "Lawyer"}]]
})";

// Efficacy table for a cancer with a nested 2x2 results table: tumor
// location/state headers, survival and treatment rows.
inline std::shared_ptr<const Table> efficacy_nested() {
  auto n = std::make_shared<Table>();
  n->hmd = HeaderTree({{"Tumor Location", {{"Colon", {}}}}, {"State", {{"Florida", {}}}}});
  n->vmd = HeaderTree::flat({"OS", "Treatment"});
  n->data = {{number_cell("20.3", "20.3 months", "months"), number_cell("15", "15 months", "months")},
             {Cell::string("bevacizumab"), Cell::string("IFL")}};
  return n;
}

inline Table efficacy_table() {
  Table t;
  t.caption = "colorectal cancer efficacy";
  t.source_id = "efficacy";
  t.hmd = HeaderTree::flat({"Cancer", "Primary Efficacy"});
  Cell host;
  host.kind = CellKind::kNested;
  host.nested = efficacy_nested();
  t.data = {{Cell::string("Colorectal Cancer"), host}};
  return t;
}

// Three-level HMD with leaves at depths 2 and 3, and a two-level VMD.
inline Table deep_table() {
  Table t;
  t.source_id = "deep";
  t.caption = "deep";
  t.hmd = HeaderTree({{"outcomes", {{"os", {}}, {"pfs", {{"median", {}}, {"range", {}}}}}},
                      {"arm", {{"drug", {}}}}});
  t.vmd = HeaderTree({{"phase", {{"one", {}}, {"two", {}}}}, {"extra", {{"three", {}}}}});
  t.data = {{number_cell("12", "12 months", "months"), number_cell("4.5", "4.5"),
             range_cell("2", "9", "2-9 months", "months"), Cell::string("bevacizumab")},
            {number_cell("20.3", "20.3 months", "months"), Cell::string(""), Cell::empty(),
             Cell::string("folfox")},
            {number_cell("7", "7"), number_cell("3", "3"), range_cell("1", "4", "1-4"),
             Cell::string("ifl")}};
  t.data[1][1] = Cell::empty();
  return t;
}

inline CorpusSpec small_spec(std::uint64_t seed, int n_tables = 20) {
  CorpusSpec s;
  s.n_tables = n_tables;
  s.topics.resize(3);
  s.min_rows = 3;
  s.max_rows = 5;
  s.min_cols = 3;
  s.max_cols = 5;
  s.seed = seed;
  return s;
}

}  // namespace tabbin::testing

#endif  // TABBIN_TESTS_FIXTURES_HPP_
