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

#include "mld/layers.hpp"

#include <cmath>

namespace mld {
namespace {

Tensor normal_tensor(std::vector<int> shape, double std, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace

Conv2d Conv2d::kaiming(int in, int out, int kernel, int stride,
                       std::mt19937_64& rng) {
  const double std = std::sqrt(2.0 / (in * kernel * kernel));
  Conv2d c;
  c.weight = parameter(normal_tensor({out, in, kernel, kernel}, std, rng));
  c.bias = parameter(Tensor({out}));
  c.stride = stride;
  c.pad = kernel / 2;
  return c;
}

Conv2d Conv2d::normal(int in, int out, int kernel, double std,
                      std::mt19937_64& rng) {
  Conv2d c;
  c.weight = parameter(normal_tensor({out, in, kernel, kernel}, std, rng));
  c.bias = parameter(Tensor({out}));
  c.stride = 1;
  c.pad = kernel / 2;
  return c;
}

Var Conv2d::operator()(const Var& x) const {
  return ops::conv2d(x, weight, bias, stride, pad);
}

void Conv2d::collect(ParamList& out, const std::string& name) const {
  out.emplace_back(name + ".weight", weight);
  out.emplace_back(name + ".bias", bias);
}

Linear Linear::kaiming(int in, int out, std::mt19937_64& rng) {
  return normal(in, out, std::sqrt(2.0 / in), rng);
}

Linear Linear::normal(int in, int out, double std, std::mt19937_64& rng) {
  Linear l;
  l.weight = parameter(normal_tensor({out, in}, std, rng));
  l.bias = parameter(Tensor({out}));
  return l;
}

Var Linear::operator()(const Var& x) const { return ops::linear(x, weight, bias); }

void Linear::collect(ParamList& out, const std::string& name) const {
  out.emplace_back(name + ".weight", weight);
  out.emplace_back(name + ".bias", bias);
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.size() == 1) return parts.front();
  int rows = 0, cols = -1;
  for (const Var& p : parts) {
    if (p->value.rank() != 2 || (cols >= 0 && p->value.dim(1) != cols)) {
      throw SizeError("concat_rows expects matrices with equal column counts");
    }
    cols = p->value.dim(1);
    rows += p->value.dim(0);
  }
  Tensor out({rows, std::max(cols, 0)});
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p->value.data(), p->value.data() + p->value.size(), out.data() + off);
    off += p->value.size();
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(out);
  for (const Var& p : parts) node->requires_grad |= p->requires_grad;
  if (node->requires_grad) {
    node->inputs = parts;
    node->backward_fn = [parts](Node& self) {
      std::size_t off = 0;
      for (const Var& p : parts) {
        if (p->requires_grad) {
          Tensor& g = p->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[off + i];
        }
        off += p->value.size();
      }
    };
  }
  return node;
}

std::size_t parameter_count(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& [name, v] : params) n += v->value.size();
  return n;
}

}  // namespace mld
