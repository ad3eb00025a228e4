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

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mld/head.hpp"
#include "mld/proposal.hpp"
#include "mld/pyramid.hpp"

namespace mld {

struct DetectorConfig {
  int input_size = 128;  // square input side
  BackboneSpec backbone;
  PyramidConfig pyramid;
  AnchorConfig anchors;
  AssignmentConfig assignment;
  RpnConfig rpn;
  HeadConfig head;

  void validate() const;
};

/// Shared 3x3 conv followed by 1x1 objectness and delta predictors, applied
/// to every proposal level.
class RpnHead {
 public:
  RpnHead(int channels, int per_location, std::mt19937_64& rng);

  std::pair<Var, Var> forward(const Var& level) const;
  void collect(ParamList& out) const;

 private:
  Conv2d conv_, cls_, reg_;
};

struct DetectorForward {
  std::map<int, Var> levels;
  std::vector<Var> rpn_logits;  // one per proposal level, [A, H, W]
  std::vector<Var> rpn_deltas;  // [4A, H, W]
};

/// Second-stage training targets; label 0 is background.
struct RoiTargets {
  std::vector<Box> rois;
  std::vector<int> labels;
  std::vector<Deltas> deltas;
};

/// Samples the head minibatch from proposals plus the ground-truth boxes.
/// Foreground: best IoU >= fg_iou (or, with cf_sampling, the centre-focus
/// rule fires for some gt). Background: everything else.
RoiTargets sample_rois(std::span<const Proposal> proposals,
                       std::span<const Annotation> gts, const HeadConfig& head,
                       const AssignmentConfig& assignment, std::mt19937_64& rng);

class Detector {
 public:
  Detector(const DetectorConfig& cfg, std::uint64_t seed);

  const DetectorConfig& config() const { return cfg_; }

  /// image: [3, S, S] with S = input_size.
  DetectorForward forward(const Tensor& image) const;

  /// Anchors of every proposal level, concatenated in level order.
  std::span<const Box> anchor_boxes() const { return anchor_boxes_; }
  const std::vector<int>& rpn_levels() const { return rpn_levels_; }
  const std::vector<std::vector<Anchor>>& level_anchors() const { return level_anchors_; }
  /// Offset of the first anchor of rpn level slot i in anchor_boxes().
  std::size_t anchor_offset(std::size_t slot) const { return anchor_offsets_[slot]; }

  std::vector<Proposal> proposals(const DetectorForward& fwd) const;

  /// Runs the RoI head. Rows of the output follow `order`, a permutation of
  /// the input RoIs grouped by pooling level.
  HeadOutput head_forward(const DetectorForward& fwd, std::span<const Box> rois,
                          std::vector<std::size_t>& order) const;

  std::vector<Detection> detect(const Tensor& image,
                                const std::string& image_id) const;

  ParamList parameters() const;
  RoiHead& roi_head() { return roi_head_; }

 private:
  DetectorConfig cfg_;
  PyramidNetwork network_;
  RpnHead rpn_head_;
  RoiHead roi_head_;
  std::vector<int> rpn_levels_;
  std::vector<std::vector<Anchor>> level_anchors_;
  std::vector<Box> anchor_boxes_;
  std::vector<std::size_t> anchor_offsets_;
};

}  // namespace mld
