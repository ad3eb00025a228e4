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

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mld/autograd.hpp"

namespace mld {

/// Named trainable tensors, in a stable order.
using ParamList = std::vector<std::pair<std::string, Var>>;

struct Conv2d {
  Var weight;  // [out, in, k, k]
  Var bias;    // [out]
  int stride = 1;
  int pad = 0;

  /// Kaiming fan-in normal weights (std = sqrt(2 / fan_in)), zero bias.
  static Conv2d kaiming(int in, int out, int kernel, int stride,
                        std::mt19937_64& rng);
  /// Normal(0, std) weights, zero bias. Used for prediction layers.
  static Conv2d normal(int in, int out, int kernel, double std,
                       std::mt19937_64& rng);

  Var operator()(const Var& x) const;
  void collect(ParamList& out, const std::string& name) const;
};

struct Linear {
  Var weight;  // [out, in]
  Var bias;    // [out]

  static Linear kaiming(int in, int out, std::mt19937_64& rng);
  static Linear normal(int in, int out, double std, std::mt19937_64& rng);

  Var operator()(const Var& x) const;
  void collect(ParamList& out, const std::string& name) const;
};

/// Stacks [n_i, F] matrices row-wise into [sum n_i, F].
Var concat_rows(const std::vector<Var>& parts);

std::size_t parameter_count(const ParamList& params);

}  // namespace mld
