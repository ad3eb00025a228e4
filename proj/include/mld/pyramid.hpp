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

// Backbone and feature pyramid construction.
//
// Three pyramid modes share one backbone contract (five stride-2 stages,
// C1..C5 at strides 2..32):
//
//   plain  single map at stride 32 built from C5
//   fpn    P2..P5, top-down nearest upsampling + lateral 1x1 projections
//   lfpn   P0..P5; the top-down pathway continues through C1 and finally
//          merges with a 1x1 lift of the raw image, so P0 has stride 1
//
// Each emitted level is smooth3x3(lateral(C_i) + upsample(M_{i+1})), where
// M_{i+1} is the pre-smoothing sum of the level above.

#pragma once

#include <array>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mld/layers.hpp"

namespace mld {

/// Required divisor of input height and width.
inline constexpr int kInputDivisor = 32;
inline constexpr int kBackboneStages = 5;

enum class ArchMode { plain, fpn, lfpn };

std::string to_string(ArchMode mode);
/// Parses "plain", "fpn" or "lfpn"; throws std::invalid_argument otherwise.
ArchMode parse_arch(const std::string& name);

struct BackboneSpec {
  std::vector<int> stage_channels = {16, 32, 64, 64, 128};
  int blocks_per_stage = 1;  // residual blocks after each stride-2 conv
  int kernel_size = 3;

  void validate() const;
};

struct PyramidConfig {
  ArchMode mode = ArchMode::lfpn;
  int channels = 64;       // shared width of every emitted level
  int lift_channels = 64;  // width of the 1x1 image lift, must equal channels

  void validate() const;
};

struct FeatureMapSpec {
  int level = 0;
  int stride = 1;
  int height = 0;
  int width = 0;
  int channels = 0;

  bool operator==(const FeatureMapSpec&) const = default;
};

/// Throws SizeError unless both dimensions are positive multiples of 32.
void check_input_size(int height, int width);

/// Levels emitted by each mode, ascending.
std::vector<int> pyramid_levels(ArchMode mode);

/// Levels that feed region proposal: lfpn P1..P5, fpn P2..P5, plain P5.
std::vector<int> proposal_levels(ArchMode mode);

/// Shapes of the emitted levels without building anything.
std::vector<FeatureMapSpec> pyramid_shapes(int height, int width,
                                           const PyramidConfig& cfg);

/// Small residual convnet honouring the 5-stage / stride-32 contract.
class Backbone {
 public:
  Backbone(const BackboneSpec& spec, std::mt19937_64& rng);

  /// image: [3, H, W] with H, W divisible by 32. Returns C1..C5.
  std::array<Var, kBackboneStages> forward(const Var& image) const;

  void collect(ParamList& out) const;
  const BackboneSpec& spec() const { return spec_; }

 private:
  struct Stage {
    Conv2d down;
    std::vector<std::pair<Conv2d, Conv2d>> blocks;
  };
  BackboneSpec spec_;
  std::vector<Stage> stages_;
};

/// Result of one lateral merge.
struct MergedLevel {
  Var merged;  // lateral(bottom_up) + top_down, before smoothing
  Var output;  // smoothed level P_i
};

class FeaturePyramid {
 public:
  FeaturePyramid(const PyramidConfig& cfg, const BackboneSpec& backbone,
                 std::mt19937_64& rng);

  /// Builds every level of the configured mode. `image` is the raw input,
  /// used only by the lfpn lift.
  std::map<int, Var> build(const Var& image,
                           const std::array<Var, kBackboneStages>& stages) const;

  /// Projects `bottom_up` to D channels (the image lift for level 0), adds
  /// `top_down` when present and smooths with the level's 3x3 conv. Throws
  /// SizeError on spatial mismatch.
  MergedLevel lateral_merge(int level, const Var& bottom_up,
                            const Var* top_down) const;

  void collect(ParamList& out) const;
  const PyramidConfig& config() const { return cfg_; }

 private:
  PyramidConfig cfg_;
  std::map<int, Conv2d> lateral_;  // level 0 holds the image lift
  std::map<int, Conv2d> smooth_;
};

/// Backbone plus pyramid; the full bottom-up / top-down feature extractor.
class PyramidNetwork {
 public:
  PyramidNetwork(const BackboneSpec& backbone, const PyramidConfig& cfg,
                 std::mt19937_64& rng);

  std::map<int, Var> forward(const Var& image) const;

  const Backbone& backbone() const { return backbone_; }
  const FeaturePyramid& pyramid() const { return pyramid_; }
  void collect(ParamList& out) const;

 private:
  Backbone backbone_;
  FeaturePyramid pyramid_;
};

}  // namespace mld
