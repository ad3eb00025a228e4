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
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mld/detector.hpp"

namespace mld {

/// Raised when a training step produces a non-finite or diverging loss.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossConfig {
  double rpn_beta = 1.0 / 9.0;  // smooth-L1 transition, RPN deltas
  double head_beta = 1.0;       // smooth-L1 transition, head deltas
};

struct LossTerms {
  Var rpn_cls, rpn_reg, head_cls, head_reg, total;
};

/// RPN predictions of one level with the position of its anchors in the
/// concatenated anchor list.
struct RpnLevelView {
  Var logits;  // [A, H, W]
  Var deltas;  // [4A, H, W]
  std::size_t anchor_offset;
};

/// Binary cross-entropy over the sampled anchors plus smooth-L1 over the
/// sampled positives, both normalised by the sample size.
std::pair<Var, Var> rpn_loss(std::span<const RpnLevelView> levels,
                             const RpnTargets& targets,
                             const AnchorSample& sample, double beta);

/// Cross-entropy over all RoIs plus class-specific smooth-L1 over the
/// foreground RoIs, both normalised by the RoI count. `labels` and `deltas`
/// must follow the head's row order.
std::pair<Var, Var> head_loss(const HeadOutput& out, std::span<const int> labels,
                              std::span<const Deltas> deltas, double beta);

struct TrainingTargets {
  RpnTargets rpn;
  AnchorSample sample;
  RoiTargets rois;
};

TrainingTargets prepare_targets(const Detector& model, const DetectorForward& fwd,
                                std::span<const Annotation> gts,
                                std::mt19937_64& rng);

LossTerms total_loss(const Detector& model, const DetectorForward& fwd,
                     const TrainingTargets& targets, const LossConfig& cfg);

struct Sample {
  std::string image_id;
  Tensor image;  // [3, H, W], values in [0, 1]
  std::vector<Annotation> annotations;
};

/// Mirrors pixels left-right and maps x to W - x - w.
std::pair<Tensor, std::vector<Annotation>> hflip(const Tensor& image,
                                                 std::span<const Annotation> anns);

struct TrainConfig {
  int epochs = 12;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lr_decay_at = 2.0 / 3.0;  // fraction of epochs
  double lr_decay = 0.1;
  int batch_size = 1;
  std::uint64_t seed = 0;
  bool hflip = true;
  double grad_clip = 10.0;  // global L2 norm, 0 disables
  double divergence_limit = 1e4;
  LossConfig loss;

  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double rpn_cls = 0, rpn_reg = 0, head_cls = 0, head_reg = 0, total = 0;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  std::vector<double> step_losses;
};

/// Momentum SGD with weight decay:
///   v <- momentum * v + (g + weight_decay * w),  w <- w - lr * v.
class SgdOptimizer {
 public:
  SgdOptimizer(ParamList params, double momentum, double weight_decay);

  void zero_grad();
  /// Scales accumulated gradients by `grad_scale`, clips, then updates.
  void step(double lr, double grad_scale, double grad_clip);

 private:
  ParamList params_;
  std::vector<Tensor> velocity_;
  double momentum_, weight_decay_;
};

/// Trains in place. Deterministic for a given (model init, data, config).
TrainResult train(Detector& model, std::span<const Sample> data,
                  const TrainConfig& cfg,
                  const std::function<void(const EpochMetrics&)>& on_epoch = {});

/// CSV header: epoch,rpn_cls,rpn_reg,head_cls,head_reg,total
void write_metrics_csv(std::ostream& os, std::span<const EpochMetrics> rows);

}  // namespace mld
