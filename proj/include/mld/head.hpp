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

// Second detector stage: RoI level selection, RoI pooling, the
// classification / regression head and detection decoding.

#pragma once

#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mld/layers.hpp"
#include "mld/proposal.hpp"
#include "mld/pyramid.hpp"

namespace mld {

/// Background plus the four lesion categories.
inline constexpr int kNumClasses = kNumCategories + 1;

enum class PoolMode { align, max };

std::string to_string(PoolMode mode);
PoolMode parse_pool_mode(const std::string& name);

struct HeadConfig {
  int pool_size = 7;
  int sampling_ratio = 2;  // 0 = adaptive
  PoolMode pool_mode = PoolMode::align;
  int hidden = 256;
  double score_threshold = 0.1;
  int max_detections = 100;
  double nms_threshold = 0.5;
  // RoI minibatch used for training the head.
  int roi_batch_size = 128;
  double positive_fraction = 0.25;
  double fg_iou = 0.5;
  // Label RoIs with the centre-focus rule instead of plain IoU >= fg_iou.
  bool cf_sampling = false;

  void validate() const;
};

struct Detection {
  std::string image_id;
  Box box;
  int category;
  double score;
};

/// Pyramid level a RoI is pooled from: lfpn always P0; fpn uses
/// clamp(4 + floor(log2(sqrt(w h) / 224)), 2, 5); plain the stride-32 map.
int select_pool_level(const Box& roi, ArchMode mode);

/// Pools every RoI from a [C, H, W] map of the given stride into a
/// [N, C * pool * pool] matrix. Throws on RoIs smaller than one pixel.
Var roi_pool(const Var& feature, std::span<const Box> rois, int stride,
             const HeadConfig& cfg);

struct HeadOutput {
  Var logits;  // [N, 5]
  Var deltas;  // [N, 16], class c (1..4) at columns 4(c-1) .. 4(c-1)+3
};

/// Two hidden fully connected layers followed by class and box predictors.
class RoiHead {
 public:
  RoiHead(int in_features, const HeadConfig& cfg, std::mt19937_64& rng);

  HeadOutput forward(const Var& pooled) const;
  void collect(ParamList& out) const;

  /// Zeroes every weight and bias (test helper).
  void zero();

 private:
  Linear fc1_, fc2_, cls_, reg_;
};

/// Drops background, applies the score threshold, per-class NMS, then keeps
/// the global top max_detections by score (ties by RoI order).
std::vector<Detection> decode_detections(std::span<const Box> rois,
                                         const Tensor& probs,
                                         const Tensor& deltas,
                                         const HeadConfig& cfg,
                                         double image_width,
                                         double image_height);

/// One JSON object per line: {"image_id","x","y","w","h","c","score"}.
void write_detections_jsonl(std::ostream& os, std::span<const Detection> dets);
std::vector<Detection> read_detections_jsonl(std::istream& is);

}  // namespace mld
