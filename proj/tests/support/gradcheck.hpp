/* Copyright 2026 The MLD Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mld/autograd.hpp"

namespace gradcheck {

struct Result {
  double max_rel_error = 0.0;  // over all checked elements
  std::size_t checked = 0;
};

/// Compares analytic gradients of `loss()` w.r.t. `leaves` with central
/// differences. Relative error per element is |a - n| / max(|a|, |n|, floor).
inline Result run(const std::function<mld::Var()>& loss, const std::vector<mld::Var>& leaves,
                  double eps = 1e-6, double floor = 1e-6) {
  for (const auto& p : leaves) {
    if (!p->grad.empty()) p->grad.fill(0.0);
  }
  mld::backward(loss());
  std::vector<mld::Tensor> analytic;
  for (const auto& p : leaves) analytic.push_back(p->grad_buffer());

  Result r;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    mld::Tensor& v = leaves[li]->value;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + eps;
      const double up = mld::item(loss());
      v[i] = orig - eps;
      const double down = mld::item(loss());
      v[i] = orig;
      const double numeric = (up - down) / (2 * eps);
      const double a = analytic[li][i];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      r.max_rel_error = std::max(r.max_rel_error, rel);
      ++r.checked;
    }
  }
  return r;
}

}  // namespace gradcheck
