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

#include <optional>
#include <string>

namespace mld {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Axis-aligned rectangle in continuous pixel coordinates, origin top-left.
/// Area is w * h (no +1 pixel convention). Zero or negative extents are
/// rejected at construction.
class Box {
 public:
  Box(double x, double y, double w, double h);

  double x() const { return x_; }
  double y() const { return y_; }
  double w() const { return w_; }
  double h() const { return h_; }
  double right() const { return x_ + w_; }
  double bottom() const { return y_ + h_; }
  double area() const { return w_ * h_; }

  /// Builds a box from corner coordinates.
  static Box from_corners(double x1, double y1, double x2, double y2);

  bool operator==(const Box&) const = default;

 private:
  double x_, y_, w_, h_;
};

/// Lesion categories used by the detector: blot hemorrhage, micro-aneurysm,
/// hard exudate, cotton-wool spot.
inline constexpr int kNumCategories = 4;

inline bool valid_category(int c) { return c >= 1 && c <= kNumCategories; }

/// Ground-truth lesion instance.
struct Annotation {
  std::string image_id;
  Box box;
  int category;

  bool operator==(const Annotation&) const = default;
};

/// Anchor-labeling thresholds.
struct AssignmentConfig {
  bool cf_enabled = true;
  double cf_iou_floor = 0.1;
  double positive_iou = 0.5;
  double negative_iou = 0.5;
  bool keep_argmax_positive = true;
  // Anchors with max(w, h) above this side do not get the center-focus
  // clause. Zero disables the cap.
  double cf_max_anchor_side = 0.0;

  /// Throws std::invalid_argument unless
  /// 0 <= cf_iou_floor < positive_iou <= 1 and negative_iou <= positive_iou.
  void validate() const;
};

enum class AnchorLabel : signed char { ignored = -1, negative = 0, positive = 1 };

double iou(const Box& a, const Box& b);
double intersection_area(const Box& a, const Box& b);
Point box_center(const Box& b);

/// Boundary-inclusive containment.
bool contains_point(const Box& b, const Point& p);

/// Center-focus anchor label. Positive iff iou >= positive_iou, or the
/// center-focus clause is enabled, iou > cf_iou_floor and the anchor
/// contains the center of the ground-truth box.
AnchorLabel cf_anchor_label(const Box& anchor, const Box& gt,
                            const AssignmentConfig& cfg);

/// Same rule with a precomputed IoU.
AnchorLabel cf_anchor_label(double overlap, bool center_inside,
                            const AssignmentConfig& cfg);

/// Clips corner coordinates to [0, width] x [0, height]. Returns nullopt when
/// the clipped extent is below `min_side` in either dimension.
std::optional<Box> clip_to_image(double x1, double y1, double x2, double y2,
                                 double width, double height,
                                 double min_side = 1e-6);

/// True iff the box lies within [0, width] x [0, height].
bool inside_image(const Box& b, double width, double height);

}  // namespace mld
