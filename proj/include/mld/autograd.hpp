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

// Minimal reverse-mode differentiation over Tensor values.
//
// Each op returns a new Node holding its forward value and a closure that
// accumulates the output gradient into its inputs. Graphs are built per
// forward pass and released when the last Var goes out of scope.

#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mld/geometry.hpp"
#include "mld/tensor.hpp"

namespace mld {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  /// Gradient storage, zero-initialised on first access.
  Tensor& grad_buffer();
};

using Var = std::shared_ptr<Node>;

/// Leaf that never receives a gradient.
Var constant(Tensor value);

/// Trainable leaf.
Var parameter(Tensor value);

/// Back-propagates from a single-element root with d(root)/d(root) = 1.
void backward(const Var& root);

/// Scalar value of a single-element Var.
double item(const Var& v);

namespace ops {

/// x: [C, H, W], w: [O, C, k, k], b: [O]  ->  [O, Ho, Wo].
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var add(const Var& a, const Var& b);
Var relu(const Var& a);
/// Nearest-neighbour 2x upsampling of a [C, H, W] map.
Var upsample2x(const Var& a);

/// Bilinear RoI pooling (aligned, half-pixel offset) over a [C, H, W] map.
/// `spatial_scale` maps image coordinates to map coordinates. A sampling
/// ratio of 0 uses ceil(roi_extent / pool_size) samples per bin side.
/// Output: [N, C * pool * pool].
Var roi_align(const Var& feature, const std::vector<Box>& rois, int pool_size,
              double spatial_scale, int sampling_ratio);

/// Quantized max RoI pooling. Output layout matches roi_align.
Var roi_max_pool(const Var& feature, const std::vector<Box>& rois,
                 int pool_size, double spatial_scale);

/// x: [N, F], w: [O, F], b: [O]  ->  [N, O].
Var linear(const Var& x, const Var& w, const Var& b);

/// Selects flat elements: out[i] = x[indices[i]]  ->  [n].
Var gather(const Var& x, const std::vector<std::size_t>& indices);

/// Sum of binary cross-entropy terms of logits against {0,1} targets.
Var bce_with_logits_sum(const Var& logits, const std::vector<double>& targets);

/// Sum of smooth-L1 terms with transition point `beta`.
Var smooth_l1_sum(const Var& pred, const std::vector<double>& target,
                  double beta);

/// Sum over rows of -log softmax(logits)[label], logits: [N, K].
Var softmax_cross_entropy_sum(const Var& logits, const std::vector<int>& labels);

Var scale(const Var& a, double s);
/// Sum over all elements of weights[i] * x[i]  ->  [1].
Var weighted_sum(const Var& x, const std::vector<double>& weights);
/// Sum of single-element Vars.
Var sum(const std::vector<Var>& terms);

}  // namespace ops

/// Row-wise softmax of a [N, K] tensor (no gradient).
Tensor softmax_rows(const Tensor& logits);
double sigmoid(double z);

}  // namespace mld
