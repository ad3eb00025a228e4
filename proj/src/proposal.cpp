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

#include "mld/proposal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mld/autograd.hpp"

namespace mld {
namespace {

// Upper bound on predicted log size ratios before exponentiation.
const double kMaxLogRatio = std::log(1000.0 / 16.0);

}  // namespace

AnchorConfig AnchorConfig::resolved(double input_side) const {
  AnchorConfig out = *this;
  if (out.reference_side <= 0.0) out.reference_side = input_side;
  return out;
}

void AnchorConfig::validate() const {
  if (scales.empty() || aspect_ratios.empty()) {
    throw std::invalid_argument("anchor scales and aspect ratios must be non-empty");
  }
  for (double s : scales) {
    if (!(s > 0.0)) throw std::invalid_argument("anchor scales must be > 0");
  }
  for (double r : aspect_ratios) {
    if (!(r > 0.0)) throw std::invalid_argument("anchor aspect ratios must be > 0");
  }
  if (reference_side < 0.0) {
    throw std::invalid_argument("anchor reference side must be >= 0");
  }
}

std::vector<Anchor> generate_anchor_grid(const FeatureMapSpec& level,
                                         const AnchorConfig& cfg) {
  cfg.validate();
  if (!(cfg.reference_side > 0.0)) {
    throw std::invalid_argument("anchor reference side is unresolved");
  }
  struct Template {
    double w, h;
    int s, r;
  };
  std::vector<Template> templates;
  for (std::size_t s = 0; s < cfg.scales.size(); ++s) {
    const double side = cfg.scales[s] * cfg.reference_side;
    for (std::size_t r = 0; r < cfg.aspect_ratios.size(); ++r) {
      const double root = std::sqrt(cfg.aspect_ratios[r]);
      templates.push_back({side * root, side / root, static_cast<int>(s),
                           static_cast<int>(r)});
    }
  }
  std::vector<Anchor> out;
  out.reserve(static_cast<std::size_t>(level.height) * level.width * templates.size());
  for (int row = 0; row < level.height; ++row) {
    const double cy = (row + 0.5) * level.stride;
    for (int col = 0; col < level.width; ++col) {
      const double cx = (col + 0.5) * level.stride;
      for (const Template& t : templates) {
        out.push_back({Box(cx - 0.5 * t.w, cy - 0.5 * t.h, t.w, t.h), level.level,
                       row, col, t.s, t.r});
      }
    }
  }
  return out;
}

Deltas encode_deltas(const Box& anchor, const Box& gt) {
  const Point a = box_center(anchor), g = box_center(gt);
  return {(g.x - a.x) / anchor.w(), (g.y - a.y) / anchor.h(),
          std::log(gt.w() / anchor.w()), std::log(gt.h() / anchor.h())};
}

Box decode_deltas(const Box& anchor, const Deltas& d) {
  for (double v : d) {
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite box delta");
  }
  const Point a = box_center(anchor);
  const double cx = a.x + d[0] * anchor.w();
  const double cy = a.y + d[1] * anchor.h();
  const double w = anchor.w() * std::exp(d[2]);
  const double h = anchor.h() * std::exp(d[3]);
  if (!std::isfinite(w) || !std::isfinite(h)) {
    throw std::invalid_argument("decoded box overflows");
  }
  return Box(cx - 0.5 * w, cy - 0.5 * h, w, h);
}

std::size_t RpnTargets::count(AnchorLabel label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

RpnTargets assign_targets(std::span<const Box> anchors,
                          std::span<const Annotation> gts,
                          const AssignmentConfig& cfg, double image_width,
                          double image_height) {
  cfg.validate();
  const std::size_t n = anchors.size();
  RpnTargets t;
  t.labels.assign(n, AnchorLabel::negative);
  t.matched_gt.assign(n, -1);
  t.deltas.assign(n, Deltas{0, 0, 0, 0});

  std::vector<Point> centers;
  centers.reserve(gts.size());
  for (const Annotation& g : gts) centers.push_back(box_center(g.box));

  std::vector<double> gt_best(gts.size(), 0.0);
  std::vector<double> best_iou(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const Box& a = anchors[i];
    if (!inside_image(a, image_width, image_height)) {
      t.labels[i] = AnchorLabel::ignored;
      continue;
    }
    const bool cf_allowed = cfg.cf_max_anchor_side <= 0.0 ||
                            std::max(a.w(), a.h()) <= cfg.cf_max_anchor_side;
    AssignmentConfig local = cfg;
    local.cf_enabled = cfg.cf_enabled && cf_allowed;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double o = iou(a, gts[g].box);
      if (o == 0.0) continue;
      if (o > best_iou[i]) {
        best_iou[i] = o;
        t.matched_gt[i] = static_cast<int>(g);
      }
      gt_best[g] = std::max(gt_best[g], o);
      if (cf_anchor_label(o, contains_point(a, centers[g]), local) ==
          AnchorLabel::positive) {
        t.labels[i] = AnchorLabel::positive;
      }
    }
  }

  if (cfg.keep_argmax_positive) {
    for (std::size_t i = 0; i < n; ++i) {
      if (t.labels[i] != AnchorLabel::negative || best_iou[i] == 0.0) continue;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (gt_best[g] > 0.0 && iou(anchors[i], gts[g].box) == gt_best[g]) {
          t.labels[i] = AnchorLabel::positive;
          break;
        }
      }
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (t.labels[i] == AnchorLabel::positive) {
      t.deltas[i] = encode_deltas(anchors[i], gts[t.matched_gt[i]].box);
    } else {
      t.matched_gt[i] = -1;
    }
  }
  return t;
}

void SamplingConfig::validate() const {
  if (batch_size < 1 || !(positive_fraction >= 0.0 && positive_fraction <= 1.0)) {
    throw std::invalid_argument(
        "sampling needs batch_size >= 1 and positive_fraction in [0, 1]");
  }
}

AnchorSample sample_anchors(const RpnTargets& targets, const SamplingConfig& cfg,
                            std::mt19937_64& rng) {
  cfg.validate();
  AnchorSample s;
  for (std::size_t i = 0; i < targets.labels.size(); ++i) {
    if (targets.labels[i] == AnchorLabel::positive) s.positives.push_back(i);
    if (targets.labels[i] == AnchorLabel::negative) s.negatives.push_back(i);
  }
  const auto max_pos = static_cast<std::size_t>(cfg.batch_size * cfg.positive_fraction);
  auto pick = [&rng](std::vector<std::size_t>& v, std::size_t keep) {
    if (v.size() > keep) {
      // Partial Fisher-Yates: only the first `keep` slots are needed.
      for (std::size_t i = 0; i < keep; ++i) {
        std::uniform_int_distribution<std::size_t> d(i, v.size() - 1);
        std::swap(v[i], v[d(rng)]);
      }
      v.resize(keep);
    }
    std::sort(v.begin(), v.end());
  };
  pick(s.positives, max_pos);
  pick(s.negatives, static_cast<std::size_t>(cfg.batch_size) - s.positives.size());
  return s;
}

std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, idx.size());
  auto better = [&scores](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k),
                    idx.end(), better);
  idx.resize(k);
  return idx;
}

std::vector<std::size_t> nms(std::span<const ScoredBox> boxes,
                             double iou_threshold) {
  std::vector<double> scores(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) scores[i] = boxes[i].score;
  const std::vector<std::size_t> order = top_k(scores, boxes.size());
  std::vector<char> dropped(boxes.size(), 0);
  std::vector<std::size_t> keep;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (dropped[i]) continue;
    keep.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!dropped[j] && iou(boxes[i].box, boxes[j].box) >= iou_threshold) {
        dropped[j] = 1;
      }
    }
  }
  return keep;
}

void RpnConfig::validate() const {
  sampling.validate();
  if (pre_nms_top_k < 1 || post_nms_top_n < 1) {
    throw std::invalid_argument("proposal budgets must be >= 1");
  }
  if (!(nms_threshold > 0.0 && nms_threshold <= 1.0)) {
    throw std::invalid_argument("rpn nms threshold must be in (0, 1]");
  }
  if (min_size < 0.0) throw std::invalid_argument("rpn min_size must be >= 0");
}

std::size_t logit_offset(std::size_t anchor_index, int height, int width,
                         int per_location) {
  const std::size_t t = anchor_index % per_location;
  const std::size_t cell = anchor_index / per_location;
  return t * static_cast<std::size_t>(height) * width + cell;
}

std::size_t delta_offset(std::size_t anchor_index, int coord, int height,
                         int width, int per_location) {
  const std::size_t t = anchor_index % per_location;
  const std::size_t cell = anchor_index / per_location;
  return (4 * t + coord) * static_cast<std::size_t>(height) * width + cell;
}

std::vector<Proposal> level_candidates(const LevelPrediction& pred,
                                       const RpnConfig& cfg, double image_width,
                                       double image_height) {
  const Tensor& logits = *pred.logits;
  const Tensor& deltas = *pred.deltas;
  if (logits.rank() != 3 || deltas.rank() != 3 ||
      deltas.dim(0) != 4 * logits.dim(0) || deltas.dim(1) != logits.dim(1) ||
      deltas.dim(2) != logits.dim(2)) {
    throw SizeError("rpn prediction shapes disagree: " + logits.shape_str() +
                    " vs " + deltas.shape_str());
  }
  const int a = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  if (pred.anchors->size() != static_cast<std::size_t>(a) * h * w) {
    throw SizeError("anchor count does not match rpn prediction at level " +
                    std::to_string(pred.level));
  }
  std::vector<double> scores(pred.anchors->size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = logits[logit_offset(i, h, w, a)];
  }
  std::vector<Proposal> out;
  for (std::size_t i : top_k(scores, static_cast<std::size_t>(cfg.pre_nms_top_k))) {
    Deltas d;
    for (int k = 0; k < 4; ++k) d[k] = deltas[delta_offset(i, k, h, w, a)];
    d[2] = std::min(d[2], kMaxLogRatio);
    d[3] = std::min(d[3], kMaxLogRatio);
    const Box raw = decode_deltas((*pred.anchors)[i].box, d);
    auto clipped = clip_to_image(raw.x(), raw.y(), raw.right(), raw.bottom(),
                                 image_width, image_height,
                                 std::max(cfg.min_size, 1e-6));
    if (!clipped) continue;
    out.push_back({*clipped, sigmoid(scores[i]), pred.level});
  }
  return out;
}

std::vector<Proposal> propose(std::span<const LevelPrediction> levels,
                              const RpnConfig& cfg, double image_width,
                              double image_height) {
  cfg.validate();
  std::vector<Proposal> all;
  for (const LevelPrediction& p : levels) {
    auto c = level_candidates(p, cfg, image_width, image_height);
    all.insert(all.end(), c.begin(), c.end());
  }
  std::vector<ScoredBox> scored;
  scored.reserve(all.size());
  for (const Proposal& p : all) scored.push_back({p.box, p.objectness});
  std::vector<Proposal> out;
  for (std::size_t i : nms(scored, cfg.nms_threshold)) {
    if (out.size() >= static_cast<std::size_t>(cfg.post_nms_top_n)) break;
    out.push_back(all[i]);
  }
  return out;
}

}  // namespace mld
