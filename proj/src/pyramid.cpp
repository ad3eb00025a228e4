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

#include "mld/pyramid.hpp"

#include <stdexcept>

namespace mld {

std::string to_string(ArchMode mode) {
  switch (mode) {
    case ArchMode::plain:
      return "plain";
    case ArchMode::fpn:
      return "fpn";
    case ArchMode::lfpn:
      return "lfpn";
  }
  return "?";
}

ArchMode parse_arch(const std::string& name) {
  if (name == "plain") return ArchMode::plain;
  if (name == "fpn") return ArchMode::fpn;
  if (name == "lfpn") return ArchMode::lfpn;
  throw std::invalid_argument("unknown architecture '" + name +
                              "' (expected plain, fpn or lfpn)");
}

void BackboneSpec::validate() const {
  if (stage_channels.size() != kBackboneStages) {
    throw std::invalid_argument("backbone needs exactly 5 stages");
  }
  for (int c : stage_channels) {
    if (c < 1) throw std::invalid_argument("backbone stage channels must be >= 1");
  }
  if (blocks_per_stage < 0) {
    throw std::invalid_argument("blocks_per_stage must be >= 0");
  }
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw std::invalid_argument("backbone kernel size must be odd and positive");
  }
}

void PyramidConfig::validate() const {
  if (channels < 1) throw std::invalid_argument("pyramid channels must be >= 1");
  if (lift_channels != channels) {
    throw std::invalid_argument(
        "lift channels must equal pyramid channels for the elementwise sum");
  }
}

void check_input_size(int height, int width) {
  if (height <= 0 || width <= 0 || height % kInputDivisor != 0 ||
      width % kInputDivisor != 0) {
    throw SizeError("input size " + std::to_string(height) + "x" +
                    std::to_string(width) + " is not divisible by 32");
  }
}

std::vector<int> pyramid_levels(ArchMode mode) {
  switch (mode) {
    case ArchMode::plain:
      return {5};
    case ArchMode::fpn:
      return {2, 3, 4, 5};
    case ArchMode::lfpn:
      return {0, 1, 2, 3, 4, 5};
  }
  return {};
}

std::vector<int> proposal_levels(ArchMode mode) {
  switch (mode) {
    case ArchMode::plain:
      return {5};
    case ArchMode::fpn:
      return {2, 3, 4, 5};
    case ArchMode::lfpn:
      return {1, 2, 3, 4, 5};
  }
  return {};
}

std::vector<FeatureMapSpec> pyramid_shapes(int height, int width,
                                           const PyramidConfig& cfg) {
  check_input_size(height, width);
  std::vector<FeatureMapSpec> out;
  for (int level : pyramid_levels(cfg.mode)) {
    const int stride = 1 << level;
    out.push_back({level, stride, height / stride, width / stride, cfg.channels});
  }
  return out;
}

Backbone::Backbone(const BackboneSpec& spec, std::mt19937_64& rng) : spec_(spec) {
  spec_.validate();
  int in = 3;
  for (int s = 0; s < kBackboneStages; ++s) {
    const int out = spec_.stage_channels[s];
    Stage stage{Conv2d::kaiming(in, out, spec_.kernel_size, 2, rng), {}};
    for (int b = 0; b < spec_.blocks_per_stage; ++b) {
      Conv2d first = Conv2d::kaiming(out, out, spec_.kernel_size, 1, rng);
      Conv2d second = Conv2d::kaiming(out, out, spec_.kernel_size, 1, rng);
      stage.blocks.emplace_back(std::move(first), std::move(second));
    }
    stages_.push_back(std::move(stage));
    in = out;
  }
}

std::array<Var, kBackboneStages> Backbone::forward(const Var& image) const {
  const Tensor& v = image->value;
  if (v.rank() != 3 || v.dim(0) != 3) {
    throw SizeError("backbone expects a [3, H, W] image, got " + v.shape_str());
  }
  check_input_size(v.dim(1), v.dim(2));
  std::array<Var, kBackboneStages> out;
  Var x = image;
  for (int s = 0; s < kBackboneStages; ++s) {
    const Stage& st = stages_[s];
    x = ops::relu(st.down(x));
    for (const auto& [first, second] : st.blocks) {
      x = ops::relu(ops::add(x, second(ops::relu(first(x)))));
    }
    out[s] = x;
  }
  return out;
}

void Backbone::collect(ParamList& out) const {
  for (int s = 0; s < kBackboneStages; ++s) {
    const std::string p = "backbone.stage" + std::to_string(s + 1);
    stages_[s].down.collect(out, p + ".down");
    for (std::size_t b = 0; b < stages_[s].blocks.size(); ++b) {
      const std::string bp = p + ".block" + std::to_string(b);
      stages_[s].blocks[b].first.collect(out, bp + ".conv1");
      stages_[s].blocks[b].second.collect(out, bp + ".conv2");
    }
  }
}

FeaturePyramid::FeaturePyramid(const PyramidConfig& cfg,
                               const BackboneSpec& backbone,
                               std::mt19937_64& rng)
    : cfg_(cfg) {
  cfg_.validate();
  backbone.validate();
  const int d = cfg_.channels;
  for (int level : pyramid_levels(cfg_.mode)) {
    const int in = level == 0 ? 3 : backbone.stage_channels[level - 1];
    lateral_.emplace(level, Conv2d::kaiming(in, level == 0 ? cfg_.lift_channels : d, 1, 1, rng));
    smooth_.emplace(level, Conv2d::kaiming(d, d, 3, 1, rng));
  }
}

MergedLevel FeaturePyramid::lateral_merge(int level, const Var& bottom_up,
                                          const Var* top_down) const {
  auto lat = lateral_.find(level);
  if (lat == lateral_.end()) {
    throw std::invalid_argument("pyramid has no level " + std::to_string(level));
  }
  Var merged = lat->second(bottom_up);
  if (top_down != nullptr) {
    const Tensor& a = merged->value;
    const Tensor& b = (*top_down)->value;
    if (a.rank() != 3 || b.rank() != 3 || a.dim(1) != b.dim(1) ||
        a.dim(2) != b.dim(2)) {
      throw SizeError("lateral merge spatial mismatch at level " +
                      std::to_string(level) + ": " + a.shape_str() + " vs " +
                      b.shape_str());
    }
    merged = ops::add(merged, *top_down);
  }
  return {merged, smooth_.at(level)(merged)};
}

std::map<int, Var> FeaturePyramid::build(
    const Var& image, const std::array<Var, kBackboneStages>& stages) const {
  std::map<int, Var> levels;
  const std::vector<int> wanted = pyramid_levels(cfg_.mode);
  Var above;
  for (auto it = wanted.rbegin(); it != wanted.rend(); ++it) {
    const int level = *it;
    const Var& bottom_up = level == 0 ? image : stages[level - 1];
    Var top_down;
    if (above) top_down = ops::upsample2x(above);
    MergedLevel m = lateral_merge(level, bottom_up, above ? &top_down : nullptr);
    levels[level] = m.output;
    above = m.merged;
  }
  return levels;
}

void FeaturePyramid::collect(ParamList& out) const {
  for (const auto& [level, conv] : lateral_) {
    conv.collect(out, (level == 0 ? std::string("pyramid.lift0")
                                  : "pyramid.lateral" + std::to_string(level)));
  }
  for (const auto& [level, conv] : smooth_) {
    conv.collect(out, "pyramid.smooth" + std::to_string(level));
  }
}

PyramidNetwork::PyramidNetwork(const BackboneSpec& backbone,
                               const PyramidConfig& cfg, std::mt19937_64& rng)
    : backbone_(backbone, rng), pyramid_(cfg, backbone, rng) {}

std::map<int, Var> PyramidNetwork::forward(const Var& image) const {
  return pyramid_.build(image, backbone_.forward(image));
}

void PyramidNetwork::collect(ParamList& out) const {
  backbone_.collect(out);
  pyramid_.collect(out);
}

}  // namespace mld
