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

#include "mld/detector.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace mld {

void DetectorConfig::validate() const {
  check_input_size(input_size, input_size);
  backbone.validate();
  pyramid.validate();
  anchors.validate();
  assignment.validate();
  rpn.validate();
  head.validate();
}

RpnHead::RpnHead(int channels, int per_location, std::mt19937_64& rng)
    : conv_(Conv2d::kaiming(channels, channels, 3, 1, rng)),
      cls_(Conv2d::normal(channels, per_location, 1, 0.01, rng)),
      reg_(Conv2d::normal(channels, 4 * per_location, 1, 0.01, rng)) {}

std::pair<Var, Var> RpnHead::forward(const Var& level) const {
  Var h = ops::relu(conv_(level));
  return {cls_(h), reg_(h)};
}

void RpnHead::collect(ParamList& out) const {
  conv_.collect(out, "rpn.conv");
  cls_.collect(out, "rpn.cls");
  reg_.collect(out, "rpn.reg");
}

namespace {

// Keeps `keep` random elements of v (partial Fisher-Yates).
void random_subset(std::vector<std::size_t>& v, std::size_t keep,
                   std::mt19937_64& rng) {
  if (v.size() <= keep) return;
  for (std::size_t i = 0; i < keep; ++i) {
    std::uniform_int_distribution<std::size_t> d(i, v.size() - 1);
    std::swap(v[i], v[d(rng)]);
  }
  v.resize(keep);
}

}  // namespace

RoiTargets sample_rois(std::span<const Proposal> proposals,
                       std::span<const Annotation> gts, const HeadConfig& head,
                       const AssignmentConfig& assignment, std::mt19937_64& rng) {
  std::vector<Box> cand;
  cand.reserve(proposals.size() + gts.size());
  for (const Proposal& p : proposals) {
    if (p.box.w() >= 1.0 && p.box.h() >= 1.0) cand.push_back(p.box);
  }
  for (const Annotation& g : gts) {
    if (g.box.w() >= 1.0 && g.box.h() >= 1.0) cand.push_back(g.box);
  }

  std::vector<int> match(cand.size(), -1);
  std::vector<std::size_t> fg, bg;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    double best = 0.0;
    int best_g = -1;
    double best_cf = 0.0;
    int best_cf_g = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double o = iou(cand[i], gts[g].box);
      if (o > best) {
        best = o;
        best_g = static_cast<int>(g);
      }
      if (head.cf_sampling && o > best_cf &&
          cf_anchor_label(o, contains_point(cand[i], box_center(gts[g].box)),
                          assignment) == AnchorLabel::positive) {
        best_cf = o;
        best_cf_g = static_cast<int>(g);
      }
    }
    if (best_g >= 0 && best >= head.fg_iou) {
      match[i] = best_g;
    } else if (best_cf_g >= 0) {
      match[i] = best_cf_g;
    }
    (match[i] >= 0 ? fg : bg).push_back(i);
  }

  const auto max_fg = static_cast<std::size_t>(head.roi_batch_size * head.positive_fraction);
  random_subset(fg, max_fg, rng);
  random_subset(bg, static_cast<std::size_t>(head.roi_batch_size) - fg.size(), rng);
  std::vector<std::size_t> chosen = fg;
  chosen.insert(chosen.end(), bg.begin(), bg.end());
  std::sort(chosen.begin(), chosen.end());

  RoiTargets t;
  for (std::size_t i : chosen) {
    t.rois.push_back(cand[i]);
    if (match[i] >= 0) {
      const Annotation& g = gts[static_cast<std::size_t>(match[i])];
      t.labels.push_back(g.category);
      t.deltas.push_back(encode_deltas(cand[i], g.box));
    } else {
      t.labels.push_back(0);
      t.deltas.push_back({0, 0, 0, 0});
    }
  }
  return t;
}

Detector::Detector(const DetectorConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      network_([&]() -> PyramidNetwork {
        cfg_.validate();
        std::mt19937_64 rng(seed);
        return PyramidNetwork(cfg_.backbone, cfg_.pyramid, rng);
      }()),
      rpn_head_([&] {
        std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
        return RpnHead(cfg_.pyramid.channels, cfg_.anchors.per_location(), rng);
      }()),
      roi_head_([&] {
        std::mt19937_64 rng(seed ^ 0xbf58476d1ce4e5b9ULL);
        return RoiHead(cfg_.pyramid.channels * cfg_.head.pool_size * cfg_.head.pool_size,
                       cfg_.head, rng);
      }()) {
  const AnchorConfig anchors = cfg_.anchors.resolved(cfg_.input_size);
  rpn_levels_ = proposal_levels(cfg_.pyramid.mode);
  const auto shapes = pyramid_shapes(cfg_.input_size, cfg_.input_size, cfg_.pyramid);
  for (int level : rpn_levels_) {
    const auto it = std::find_if(shapes.begin(), shapes.end(),
                                 [level](const FeatureMapSpec& s) { return s.level == level; });
    anchor_offsets_.push_back(anchor_boxes_.size());
    level_anchors_.push_back(generate_anchor_grid(*it, anchors));
    for (const Anchor& a : level_anchors_.back()) anchor_boxes_.push_back(a.box);
  }
}

DetectorForward Detector::forward(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(1) != cfg_.input_size ||
      image.dim(2) != cfg_.input_size) {
    throw SizeError("detector expects a [3, " + std::to_string(cfg_.input_size) +
                    ", " + std::to_string(cfg_.input_size) + "] image, got " +
                    image.shape_str());
  }
  DetectorForward fwd;
  fwd.levels = network_.forward(constant(image));
  for (int level : rpn_levels_) {
    auto [logits, deltas] = rpn_head_.forward(fwd.levels.at(level));
    fwd.rpn_logits.push_back(std::move(logits));
    fwd.rpn_deltas.push_back(std::move(deltas));
  }
  return fwd;
}

std::vector<Proposal> Detector::proposals(const DetectorForward& fwd) const {
  std::vector<LevelPrediction> preds;
  for (std::size_t i = 0; i < rpn_levels_.size(); ++i) {
    preds.push_back({rpn_levels_[i], &fwd.rpn_logits[i]->value,
                     &fwd.rpn_deltas[i]->value, &level_anchors_[i]});
  }
  return propose(preds, cfg_.rpn, cfg_.input_size, cfg_.input_size);
}

HeadOutput Detector::head_forward(const DetectorForward& fwd,
                                  std::span<const Box> rois,
                                  std::vector<std::size_t>& order) const {
  std::vector<int> level(rois.size());
  for (std::size_t i = 0; i < rois.size(); ++i) {
    level[i] = select_pool_level(rois[i], cfg_.pyramid.mode);
  }
  order.resize(rois.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&level](std::size_t a, std::size_t b) { return level[a] < level[b]; });
  std::vector<Var> parts;
  for (std::size_t start = 0; start < order.size();) {
    std::size_t end = start;
    std::vector<Box> group;
    while (end < order.size() && level[order[end]] == level[order[start]]) {
      group.push_back(rois[order[end]]);
      ++end;
    }
    const int lv = level[order[start]];
    parts.push_back(roi_pool(fwd.levels.at(lv), group, 1 << lv, cfg_.head));
    start = end;
  }
  if (parts.empty()) {
    const int f = cfg_.pyramid.channels * cfg_.head.pool_size * cfg_.head.pool_size;
    parts.push_back(constant(Tensor({0, f})));
  }
  return roi_head_.forward(concat_rows(parts));
}

std::vector<Detection> Detector::detect(const Tensor& image,
                                        const std::string& image_id) const {
  const DetectorForward fwd = forward(image);
  const std::vector<Proposal> props = proposals(fwd);
  if (props.empty()) return {};
  std::vector<Box> rois;
  for (const Proposal& p : props) rois.push_back(p.box);
  std::vector<std::size_t> order;
  const HeadOutput out = head_forward(fwd, rois, order);
  std::vector<Box> ordered;
  for (std::size_t i : order) ordered.push_back(rois[i]);
  const Tensor probs = softmax_rows(out.logits->value);
  auto dets = decode_detections(ordered, probs, out.deltas->value, cfg_.head,
                                cfg_.input_size, cfg_.input_size);
  for (Detection& d : dets) d.image_id = image_id;
  return dets;
}

ParamList Detector::parameters() const {
  ParamList out;
  network_.collect(out);
  rpn_head_.collect(out);
  roi_head_.collect(out);
  return out;
}

}  // namespace mld
