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

#include "mld/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mld {

Box::Box(double x, double y, double w, double h) : x_(x), y_(y), w_(w), h_(h) {
  if (!(w > 0.0) || !(h > 0.0) || !std::isfinite(x) || !std::isfinite(y) ||
      !std::isfinite(x + w) || !std::isfinite(y + h)) {
    std::ostringstream os;
    os << "invalid box (" << x << ", " << y << ", " << w << ", " << h
       << "): width and height must be positive and coordinates finite";
    throw std::invalid_argument(os.str());
  }
}

Box Box::from_corners(double x1, double y1, double x2, double y2) {
  return Box(x1, y1, x2 - x1, y2 - y1);
}

void AssignmentConfig::validate() const {
  if (!(cf_iou_floor >= 0.0 && cf_iou_floor < positive_iou &&
        positive_iou <= 1.0 && negative_iou <= positive_iou)) {
    throw std::invalid_argument(
        "assignment config requires 0 <= cf_iou_floor < positive_iou <= 1 "
        "and negative_iou <= positive_iou");
  }
  if (cf_max_anchor_side < 0.0) {
    throw std::invalid_argument("cf_max_anchor_side must be >= 0");
  }
}

double intersection_area(const Box& a, const Box& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.x(), b.x());
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y(), b.y());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  if (inter == 0.0) return 0.0;
  if (a == b) return 1.0;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

Point box_center(const Box& b) {
  return {b.x() + 0.5 * b.w(), b.y() + 0.5 * b.h()};
}

bool contains_point(const Box& b, const Point& p) {
  return b.x() <= p.x && p.x <= b.right() && b.y() <= p.y && p.y <= b.bottom();
}

AnchorLabel cf_anchor_label(double overlap, bool center_inside,
                            const AssignmentConfig& cfg) {
  if (overlap >= cfg.positive_iou) return AnchorLabel::positive;
  if (cfg.cf_enabled && overlap > cfg.cf_iou_floor && center_inside) {
    return AnchorLabel::positive;
  }
  return AnchorLabel::negative;
}

AnchorLabel cf_anchor_label(const Box& anchor, const Box& gt,
                            const AssignmentConfig& cfg) {
  return cf_anchor_label(iou(anchor, gt), contains_point(anchor, box_center(gt)),
                         cfg);
}

std::optional<Box> clip_to_image(double x1, double y1, double x2, double y2,
                                 double width, double height,
                                 double min_side) {
  x1 = std::clamp(x1, 0.0, width);
  x2 = std::clamp(x2, 0.0, width);
  y1 = std::clamp(y1, 0.0, height);
  y2 = std::clamp(y2, 0.0, height);
  if (!(x2 - x1 >= min_side) || !(y2 - y1 >= min_side)) return std::nullopt;
  return Box::from_corners(x1, y1, x2, y2);
}

bool inside_image(const Box& b, double width, double height) {
  return b.x() >= 0.0 && b.y() >= 0.0 && b.right() <= width &&
         b.bottom() <= height;
}

}  // namespace mld
