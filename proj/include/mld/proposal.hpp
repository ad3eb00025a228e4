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

// First detector stage: anchors, target assignment, box deltas, NMS and
// proposal decoding.

#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "mld/geometry.hpp"
#include "mld/pyramid.hpp"
#include "mld/tensor.hpp"

namespace mld {

struct AnchorConfig {
  std::vector<double> scales = {0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0};
  std::vector<double> aspect_ratios = {0.5, 1.0, 2.0};
  // Anchor side = scale * reference_side. Zero means "the input side".
  double reference_side = 0.0;

  int per_location() const {
    return static_cast<int>(scales.size() * aspect_ratios.size());
  }
  /// Copy with a zero reference side replaced by `input_side`.
  AnchorConfig resolved(double input_side) const;
  void validate() const;
};

struct Anchor {
  Box box;
  int level;
  int row;
  int col;
  int scale_index;
  int ratio_index;
};

/// Anchors of one level ordered by (row, col, scale, ratio). Template
/// (s, r) has side = scales[s] * reference_side, width = side * sqrt(r),
/// height = side / sqrt(r), centred on ((col + .5) * stride, (row + .5) * stride).
std::vector<Anchor> generate_anchor_grid(const FeatureMapSpec& level,
                                         const AnchorConfig& cfg);

/// Regression parameterisation (dx, dy, dw, dh): centre offsets relative to
/// the reference size and log size ratios.
using Deltas = std::array<double, 4>;

Deltas encode_deltas(const Box& anchor, const Box& gt);
/// Inverse of encode_deltas, unclipped. Throws std::invalid_argument on
/// non-finite deltas or a non-finite result.
Box decode_deltas(const Box& anchor, const Deltas& d);

struct RpnTargets {
  std::vector<AnchorLabel> labels;  // ignored = crosses the image boundary
  std::vector<int> matched_gt;      // -1 unless positive
  std::vector<Deltas> deltas;       // zero unless positive

  std::size_t count(AnchorLabel label) const;
};

/// Labels anchors against ground truth. An anchor is positive when the
/// centre-focus rule fires for any gt, or (keep_argmax_positive) it attains
/// the highest IoU of some gt among in-image anchors. Positives regress
/// towards their highest-IoU gt, ties to the lowest gt index. Anchors not
/// inside [0, W] x [0, H] are ignored.
RpnTargets assign_targets(std::span<const Box> anchors,
                          std::span<const Annotation> gts,
                          const AssignmentConfig& cfg, double image_width,
                          double image_height);

struct SamplingConfig {
  int batch_size = 256;
  double positive_fraction = 0.5;

  void validate() const;
};

struct AnchorSample {
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
};

/// Random minibatch: at most batch_size * positive_fraction positives, the
/// rest negatives. Returned index lists are sorted ascending.
AnchorSample sample_anchors(const RpnTargets& targets, const SamplingConfig& cfg,
                            std::mt19937_64& rng);

struct ScoredBox {
  Box box;
  double score;
};

/// Greedy NMS in descending score, ties by ascending input index. A box is
/// dropped when its IoU with an already kept box is >= iou_threshold.
/// Returns kept indices in selection order.
std::vector<std::size_t> nms(std::span<const ScoredBox> boxes,
                             double iou_threshold);

/// Indices of the k largest scores, descending, ties by ascending index.
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k);

struct RpnConfig {
  SamplingConfig sampling;
  int pre_nms_top_k = 1000;  // per level
  int post_nms_top_n = 300;
  double nms_threshold = 0.7;
  double min_size = 1.0;

  void validate() const;
};

struct Proposal {
  Box box;
  double objectness;
  int level;
};

/// Raw RPN outputs for one level: objectness logits [A, H, W] and deltas
/// [4A, H, W], where channel 4a + k holds coordinate k of template a.
struct LevelPrediction {
  int level;
  const Tensor* logits;
  const Tensor* deltas;
  const std::vector<Anchor>* anchors;
};

/// Flat offsets of anchor `index` in its level's prediction tensors.
std::size_t logit_offset(std::size_t anchor_index, int height, int width,
                         int per_location);
std::size_t delta_offset(std::size_t anchor_index, int coord, int height,
                         int width, int per_location);

/// Per-level candidates before NMS: top-k anchors by objectness, decoded and
/// clipped to the image; boxes under min_size are dropped.
std::vector<Proposal> level_candidates(const LevelPrediction& pred,
                                       const RpnConfig& cfg, double image_width,
                                       double image_height);

/// Candidates of every level merged, NMS, then the global top-N.
std::vector<Proposal> propose(std::span<const LevelPrediction> levels,
                              const RpnConfig& cfg, double image_width,
                              double image_height);

}  // namespace mld
