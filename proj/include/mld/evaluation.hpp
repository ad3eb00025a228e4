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

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "mld/geometry.hpp"
#include "mld/head.hpp"

namespace mld {

enum class CriterionKind { cf, iou };

/// cf: IoU > threshold and the detection contains the gt centre.
/// iou: IoU >= threshold.
struct MatchCriterion {
  CriterionKind kind = CriterionKind::cf;
  double iou_threshold = 0.1;

  static MatchCriterion centre_focus(double floor = 0.1) { return {CriterionKind::cf, floor}; }
  static MatchCriterion overlap(double threshold = 0.5) { return {CriterionKind::iou, threshold}; }

  bool accepts(const Box& detection, const Box& gt) const;
  void validate() const;
  std::string name() const;
};

/// Parses "cf" or "iou" with the default threshold of that kind.
MatchCriterion parse_criterion(const std::string& name);

/// Indices into the input lists; -1 when unmatched.
struct MatchResult {
  std::vector<int> gt_to_det;
  std::vector<int> det_to_gt;
};

/// Per image, detections are visited by descending score (ties by input
/// order) and each takes the unmatched same-category gt it accepts with the
/// highest IoU, ties to the lowest gt index. Throws ValidationError on a
/// category outside 1..4.
MatchResult match(std::span<const Detection> dets, std::span<const Annotation> gts,
                  const MatchCriterion& criterion);

struct CategoryStats {
  int gt = 0;
  int tp = 0;
  int fn = 0;
  int detections = 0;
  int false_positives = 0;

  /// tp / gt, empty when there are no ground-truth boxes.
  std::optional<double> sensitivity() const;
};

struct SensitivitySummary {
  std::array<CategoryStats, kNumCategories> per_category;
  CategoryStats overall;  // micro average
};

SensitivitySummary sensitivity(std::span<const Detection> dets,
                               std::span<const Annotation> gts, const MatchResult& m);

std::vector<double> default_iou_thresholds();  // 0.1, 0.2, ..., 0.9

/// Overall recall under the IoU criterion at each threshold, matching
/// re-run per point. Zero when there are no ground-truth boxes.
std::vector<double> recall_vs_iou(std::span<const Detection> dets,
                                  std::span<const Annotation> gts,
                                  std::span<const double> thresholds);

/// Rows: gt category 1..4. Column 0 counts gts no detection accepts under the
/// criterion regardless of category; column k counts gts whose highest
/// scoring accepting detection has category k.
using ConfusionSummary = std::array<std::array<int, kNumClasses>, kNumCategories>;
ConfusionSummary confusion_summary(std::span<const Detection> dets,
                                   std::span<const Annotation> gts,
                                   const MatchCriterion& criterion);

struct EvalReport {
  std::string method;
  MatchCriterion criterion;
  SensitivitySummary summary;
  std::vector<double> thresholds;
  std::vector<double> recall;
  ConfusionSummary confusion{};
  nlohmann::json config = nlohmann::json::object();
};

EvalReport evaluate(const std::string& method, std::span<const Detection> dets,
                    std::span<const Annotation> gts, const MatchCriterion& criterion,
                    std::span<const double> thresholds);

nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

/// One row per report: method followed by the four category sensitivities,
/// "n/a" when a category has no ground truth.
void write_sensitivity_csv(std::ostream& os, std::span<const EvalReport> reports);

/// Recall-vs-IoU polylines, one per report. Throws ValidationError when the
/// reports use different threshold grids.
void write_recall_svg(std::ostream& os, std::span<const EvalReport> reports);

/// Writes report.json, report.csv and recall_curve.svg into `dir`.
void emit_report(const std::filesystem::path& dir, const EvalReport& report);

EvalReport read_report(const std::filesystem::path& path);

}  // namespace mld
