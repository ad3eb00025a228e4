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

#include "mld/head.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

#include "mld/io_error.hpp"

namespace mld {

std::string to_string(PoolMode mode) {
  return mode == PoolMode::align ? "align" : "max";
}

PoolMode parse_pool_mode(const std::string& name) {
  if (name == "align") return PoolMode::align;
  if (name == "max") return PoolMode::max;
  throw std::invalid_argument("unknown pool mode '" + name + "' (align or max)");
}

void HeadConfig::validate() const {
  if (pool_size < 1) throw std::invalid_argument("pool_size must be >= 1");
  if (sampling_ratio < 0) throw std::invalid_argument("sampling_ratio must be >= 0");
  if (hidden < 1) throw std::invalid_argument("head hidden width must be >= 1");
  if (!(score_threshold >= 0.0 && score_threshold <= 1.0)) {
    throw std::invalid_argument("score_threshold must be in [0, 1]");
  }
  if (max_detections < 0) throw std::invalid_argument("max_detections must be >= 0");
  if (!(nms_threshold > 0.0 && nms_threshold <= 1.0)) {
    throw std::invalid_argument("head nms threshold must be in (0, 1]");
  }
  if (roi_batch_size < 1 || !(positive_fraction >= 0.0 && positive_fraction <= 1.0)) {
    throw std::invalid_argument("invalid RoI sampling configuration");
  }
  if (!(fg_iou > 0.0 && fg_iou <= 1.0)) {
    throw std::invalid_argument("fg_iou must be in (0, 1]");
  }
}

int select_pool_level(const Box& roi, ArchMode mode) {
  switch (mode) {
    case ArchMode::lfpn:
      return 0;
    case ArchMode::plain:
      return 5;
    case ArchMode::fpn: {
      const double side = std::sqrt(roi.w() * roi.h());
      const int k = 4 + static_cast<int>(std::floor(std::log2(side / 224.0)));
      return std::clamp(k, 2, 5);
    }
  }
  return 0;
}

Var roi_pool(const Var& feature, std::span<const Box> rois, int stride,
             const HeadConfig& cfg) {
  std::vector<Box> r(rois.begin(), rois.end());
  const double scale = 1.0 / stride;
  if (cfg.pool_mode == PoolMode::max) {
    return ops::roi_max_pool(feature, r, cfg.pool_size, scale);
  }
  return ops::roi_align(feature, r, cfg.pool_size, scale, cfg.sampling_ratio);
}

RoiHead::RoiHead(int in_features, const HeadConfig& cfg, std::mt19937_64& rng)
    : fc1_(Linear::kaiming(in_features, cfg.hidden, rng)),
      fc2_(Linear::kaiming(cfg.hidden, cfg.hidden, rng)),
      cls_(Linear::normal(cfg.hidden, kNumClasses, 0.01, rng)),
      reg_(Linear::normal(cfg.hidden, 4 * kNumCategories, 0.001, rng)) {}

HeadOutput RoiHead::forward(const Var& pooled) const {
  Var h = ops::relu(fc1_(pooled));
  h = ops::relu(fc2_(h));
  return {cls_(h), reg_(h)};
}

void RoiHead::collect(ParamList& out) const {
  fc1_.collect(out, "head.fc1");
  fc2_.collect(out, "head.fc2");
  cls_.collect(out, "head.cls");
  reg_.collect(out, "head.reg");
}

void RoiHead::zero() {
  for (const Linear* l : {&fc1_, &fc2_, &cls_, &reg_}) {
    l->weight->value.fill(0.0);
    l->bias->value.fill(0.0);
  }
}

std::vector<Detection> decode_detections(std::span<const Box> rois,
                                         const Tensor& probs,
                                         const Tensor& deltas,
                                         const HeadConfig& cfg,
                                         double image_width,
                                         double image_height) {
  const std::size_t n = rois.size();
  if (probs.size() != n * kNumClasses || deltas.size() != n * 4 * kNumCategories) {
    throw SizeError("head outputs do not match the RoI count");
  }
  std::vector<Detection> all;
  for (int c = 1; c <= kNumCategories; ++c) {
    std::vector<ScoredBox> cand;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = probs[i * kNumClasses + c];
      if (!(s >= cfg.score_threshold)) continue;
      Deltas d;
      for (int k = 0; k < 4; ++k) {
        d[k] = deltas[i * 4 * kNumCategories + 4 * (c - 1) + k];
      }
      d[2] = std::min(d[2], std::log(1000.0 / 16.0));
      d[3] = std::min(d[3], std::log(1000.0 / 16.0));
      const Box raw = decode_deltas(rois[i], d);
      auto clipped = clip_to_image(raw.x(), raw.y(), raw.right(), raw.bottom(),
                                   image_width, image_height);
      if (!clipped) continue;
      cand.push_back({*clipped, s});
    }
    for (std::size_t k : nms(cand, cfg.nms_threshold)) {
      all.push_back({"", cand[k].box, c, cand[k].score});
    }
  }
  // Stable: equal scores keep class-then-selection order.
  std::stable_sort(all.begin(), all.end(), [](const Detection& a, const Detection& b) {
    return a.score > b.score;
  });
  if (all.size() > static_cast<std::size_t>(cfg.max_detections)) {
    all.erase(all.begin() + cfg.max_detections, all.end());
  }
  return all;
}

void write_detections_jsonl(std::ostream& os, std::span<const Detection> dets) {
  for (const Detection& d : dets) {
    nlohmann::json j = {{"image_id", d.image_id}, {"x", d.box.x()},
                        {"y", d.box.y()},         {"w", d.box.w()},
                        {"h", d.box.h()},         {"c", d.category},
                        {"score", d.score}};
    os << j.dump() << '\n';
  }
}

std::vector<Detection> read_detections_jsonl(std::istream& is) {
  std::vector<Detection> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const int c = j.at("c").get<int>();
      if (!valid_category(c)) {
        throw ValidationError("line " + std::to_string(lineno) +
                              ": category " + std::to_string(c) +
                              " outside 1..4");
      }
      out.push_back({j.at("image_id").get<std::string>(),
                     Box(j.at("x").get<double>(), j.at("y").get<double>(),
                         j.at("w").get<double>(), j.at("h").get<double>()),
                     c, j.at("score").get<double>()});
    } catch (const ValidationError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError("detections line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace mld
