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

// Central finite-difference gradient checking over any parameter container
// exposing visit(name, Matrix&).

#ifndef TABBIN_GRADCHECK_HPP_
#define TABBIN_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tabbin/tensor.hpp"

namespace tabbin {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  Eigen::Index worst_index = -1;
  std::size_t coords_checked = 0;
};

struct GradCheckOptions {
  double eps = 2e-3;
  bool fourth_order = true;      // 5-point stencil; false uses (f(x+e) - f(x-e)) / 2e
  int samples_per_tensor = 200;  // random coordinates (all when the tensor is smaller)
  int largest_per_tensor = 50;   // plus the coordinates with the largest analytic gradient
  double abs_floor = 1e-7;       // denominator floor for near-zero gradients
  std::uint64_t seed = 0;
};

// Single tensor wrapper for checking free-standing functions.
struct TensorParams {
  Matrix<double> value;
  template <class F>
  void visit(F&& f) {
    f("value", value);
  }
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// `params` is perturbed in place and restored; `analytic` has the same layout
// and holds d(loss)/d(params). loss() re-evaluates the scalar loss at the
// current value of `params`.
template <class Params, class LossFn>
GradCheckResult grad_check(Params& params, Params& analytic, LossFn&& loss,
                           const GradCheckOptions& opt = {}) {
  std::vector<std::pair<std::string, Matrix<double>*>> ps, gs;
  params.visit([&](const std::string& n, Matrix<double>& m) { ps.emplace_back(n, &m); });
  analytic.visit([&](const std::string& n, Matrix<double>& m) { gs.emplace_back(n, &m); });
  Rng rng(opt.seed);
  GradCheckResult res;
  for (std::size_t t = 0; t < ps.size(); ++t) {
    Matrix<double>& w = *ps[t].second;
    const Matrix<double>& g = *gs[t].second;
    const Eigen::Index size = w.size();
    std::vector<Eigen::Index> coords;
    if (size <= opt.samples_per_tensor) {
      for (Eigen::Index i = 0; i < size; ++i) coords.push_back(i);
    } else {
      for (int s = 0; s < opt.samples_per_tensor; ++s) {
        coords.push_back(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(size))));
      }
      std::vector<Eigen::Index> order(size);
      for (Eigen::Index i = 0; i < size; ++i) order[i] = i;
      const auto top = std::min<Eigen::Index>(opt.largest_per_tensor, size);
      std::partial_sort(order.begin(), order.begin() + top, order.end(),
                        [&](Eigen::Index a, Eigen::Index b) {
                          return std::abs(g.data()[a]) > std::abs(g.data()[b]);
                        });
      coords.insert(coords.end(), order.begin(), order.begin() + top);
    }
    std::sort(coords.begin(), coords.end());
    coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    for (Eigen::Index i : coords) {
      const double orig = w.data()[i];
      auto at = [&](double delta) {
        w.data()[i] = orig + delta;
        return loss();
      };
      const double e = opt.eps;
      double numeric = 0.0;
      if (opt.fourth_order) {
        numeric = (8.0 * (at(e) - at(-e)) - (at(2 * e) - at(-2 * e))) / (12.0 * e);
      } else {
        numeric = (at(e) - at(-e)) / (2.0 * e);
      }
      w.data()[i] = orig;
      const double err = relative_error(g.data()[i], numeric, opt.abs_floor);
      ++res.coords_checked;
      if (res.worst_index < 0 || err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_tensor = ps[t].first;
        res.worst_index = i;
      }
    }
  }
  return res;
}

}  // namespace tabbin

#endif  // TABBIN_GRADCHECK_HPP_
