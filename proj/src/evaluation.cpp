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

#include "mld/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "mld/io_error.hpp"

namespace mld {

namespace {

constexpr std::array<const char*, kNumCategories> kCategoryNames = {
    "blot_hemorrhage", "micro_aneurysm", "hard_exudate", "cotton_wool_spot"};

void check_category(int c, const char* what, std::size_t index) {
  if (!valid_category(c)) {
    throw ValidationError(std::string(what) + " " + std::to_string(index) + " has category " +
                          std::to_string(c) + " outside 1..4");
  }
}

// Indices grouped by image id, each group in input order.
template <typename T>
std::map<std::string, std::vector<std::size_t>> by_image(std::span<const T> items) {
  std::map<std::string, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < items.size(); ++i) out[items[i].image_id].push_back(i);
  return out;
}

}  // namespace

bool MatchCriterion::accepts(const Box& detection, const Box& gt) const {
  const double o = iou(detection, gt);
  if (kind == CriterionKind::iou) return o >= iou_threshold;
  return o > iou_threshold && contains_point(detection, box_center(gt));
}

void MatchCriterion::validate() const {
  if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0)) {
    throw ValidationError("match threshold must be in [0, 1]");
  }
}

std::string MatchCriterion::name() const { return kind == CriterionKind::cf ? "cf" : "iou"; }

MatchCriterion parse_criterion(const std::string& name) {
  if (name == "cf") return MatchCriterion::centre_focus();
  if (name == "iou") return MatchCriterion::overlap();
  throw std::invalid_argument("unknown criterion '" + name + "' (cf or iou)");
}

MatchResult match(std::span<const Detection> dets, std::span<const Annotation> gts,
                  const MatchCriterion& criterion) {
  criterion.validate();
  for (std::size_t i = 0; i < dets.size(); ++i) check_category(dets[i].category, "detection", i);
  for (std::size_t i = 0; i < gts.size(); ++i) check_category(gts[i].category, "annotation", i);

  MatchResult m;
  m.det_to_gt.assign(dets.size(), -1);
  m.gt_to_det.assign(gts.size(), -1);
  const auto gt_groups = by_image(gts);
  for (const auto& [image, det_idx] : by_image(dets)) {
    const auto it = gt_groups.find(image);
    if (it == gt_groups.end()) continue;
    const std::vector<std::size_t>& gt_idx = it->second;
    std::vector<std::size_t> order = det_idx;
    std::stable_sort(order.begin(), order.end(), [&dets](std::size_t a, std::size_t b) {
      return dets[a].score > dets[b].score;
    });
    for (std::size_t d : order) {
      int best = -1;
      double best_iou = -1.0;
      for (std::size_t g : gt_idx) {
        if (m.gt_to_det[g] >= 0 || gts[g].category != dets[d].category) continue;
        if (!criterion.accepts(dets[d].box, gts[g].box)) continue;
        const double o = iou(dets[d].box, gts[g].box);
        if (o > best_iou) {
          best_iou = o;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0) {
        m.det_to_gt[d] = best;
        m.gt_to_det[static_cast<std::size_t>(best)] = static_cast<int>(d);
      }
    }
  }
  return m;
}

std::optional<double> CategoryStats::sensitivity() const {
  if (gt == 0) return std::nullopt;
  return static_cast<double>(tp) / gt;
}

SensitivitySummary sensitivity(std::span<const Detection> dets,
                               std::span<const Annotation> gts, const MatchResult& m) {
  if (m.gt_to_det.size() != gts.size() || m.det_to_gt.size() != dets.size()) {
    throw std::invalid_argument("match result does not fit the inputs");
  }
  SensitivitySummary s;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    check_category(gts[g].category, "annotation", g);
    CategoryStats& c = s.per_category[static_cast<std::size_t>(gts[g].category - 1)];
    ++c.gt;
    ++(m.gt_to_det[g] >= 0 ? c.tp : c.fn);
  }
  for (std::size_t d = 0; d < dets.size(); ++d) {
    check_category(dets[d].category, "detection", d);
    CategoryStats& c = s.per_category[static_cast<std::size_t>(dets[d].category - 1)];
    ++c.detections;
    if (m.det_to_gt[d] < 0) ++c.false_positives;
  }
  for (const CategoryStats& c : s.per_category) {
    s.overall.gt += c.gt;
    s.overall.tp += c.tp;
    s.overall.fn += c.fn;
    s.overall.detections += c.detections;
    s.overall.false_positives += c.false_positives;
  }
  return s;
}

std::vector<double> default_iou_thresholds() {
  std::vector<double> t;
  for (int i = 1; i <= 9; ++i) t.push_back(i / 10.0);
  return t;
}

std::vector<double> recall_vs_iou(std::span<const Detection> dets,
                                  std::span<const Annotation> gts,
                                  std::span<const double> thresholds) {
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) {
    throw std::invalid_argument("recall thresholds must be sorted ascending");
  }
  std::vector<double> out;
  for (double t : thresholds) {
    const MatchResult m = match(dets, gts, MatchCriterion::overlap(t));
    const auto tp = std::count_if(m.gt_to_det.begin(), m.gt_to_det.end(),
                                  [](int d) { return d >= 0; });
    out.push_back(gts.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(gts.size()));
  }
  return out;
}

ConfusionSummary confusion_summary(std::span<const Detection> dets,
                                   std::span<const Annotation> gts,
                                   const MatchCriterion& criterion) {
  ConfusionSummary out{};
  const auto det_groups = by_image(dets);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    check_category(gts[g].category, "annotation", g);
    int best = -1;
    const auto it = det_groups.find(gts[g].image_id);
    if (it != det_groups.end()) {
      for (std::size_t d : it->second) {
        if (!criterion.accepts(dets[d].box, gts[g].box)) continue;
        if (best < 0 || dets[d].score > dets[static_cast<std::size_t>(best)].score) {
          best = static_cast<int>(d);
        }
      }
    }
    const int col = best < 0 ? 0 : dets[static_cast<std::size_t>(best)].category;
    ++out[static_cast<std::size_t>(gts[g].category - 1)][static_cast<std::size_t>(col)];
  }
  return out;
}

EvalReport evaluate(const std::string& method, std::span<const Detection> dets,
                    std::span<const Annotation> gts, const MatchCriterion& criterion,
                    std::span<const double> thresholds) {
  EvalReport r;
  r.method = method;
  r.criterion = criterion;
  r.summary = sensitivity(dets, gts, match(dets, gts, criterion));
  r.thresholds.assign(thresholds.begin(), thresholds.end());
  r.recall = recall_vs_iou(dets, gts, thresholds);
  r.confusion = confusion_summary(dets, gts, criterion);
  return r;
}

namespace {

nlohmann::json stats_json(const CategoryStats& c) {
  nlohmann::json j = {{"gt", c.gt},
                      {"tp", c.tp},
                      {"fn", c.fn},
                      {"detections", c.detections},
                      {"false_positives", c.false_positives}};
  const auto s = c.sensitivity();
  j["sensitivity"] = s ? nlohmann::json(*s) : nlohmann::json(nullptr);
  return j;
}

CategoryStats stats_from_json(const nlohmann::json& j) {
  CategoryStats c;
  c.gt = j.at("gt").get<int>();
  c.tp = j.at("tp").get<int>();
  c.fn = j.at("fn").get<int>();
  c.detections = j.at("detections").get<int>();
  c.false_positives = j.at("false_positives").get<int>();
  return c;
}

}  // namespace

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json cats = nlohmann::json::object();
  for (int c = 0; c < kNumCategories; ++c) {
    cats[std::to_string(c + 1)] = stats_json(r.summary.per_category[c]);
    cats[std::to_string(c + 1)]["name"] = kCategoryNames[c];
  }
  return {{"method", r.method},
          {"criterion", {{"kind", r.criterion.name()}, {"iou_threshold", r.criterion.iou_threshold}}},
          {"categories", cats},
          {"overall", stats_json(r.summary.overall)},
          {"recall_curve", {{"thresholds", r.thresholds}, {"recall", r.recall}}},
          {"confusion", r.confusion},
          {"config", r.config}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.method = j.at("method").get<std::string>();
    const auto& c = j.at("criterion");
    r.criterion.kind = c.at("kind").get<std::string>() == "cf" ? CriterionKind::cf
                                                                : CriterionKind::iou;
    r.criterion.iou_threshold = c.at("iou_threshold").get<double>();
    for (int k = 0; k < kNumCategories; ++k) {
      r.summary.per_category[k] = stats_from_json(j.at("categories").at(std::to_string(k + 1)));
    }
    r.summary.overall = stats_from_json(j.at("overall"));
    r.thresholds = j.at("recall_curve").at("thresholds").get<std::vector<double>>();
    r.recall = j.at("recall_curve").at("recall").get<std::vector<double>>();
    r.confusion = j.at("confusion").get<ConfusionSummary>();
    if (j.contains("config")) r.config = j.at("config");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed report: ") + e.what());
  }
  if (r.thresholds.size() != r.recall.size()) {
    throw ValidationError("report recall curve has mismatched lengths");
  }
  return r;
}

void write_sensitivity_csv(std::ostream& os, std::span<const EvalReport> reports) {
  os << "method";
  for (const char* name : kCategoryNames) os << ',' << name;
  os << '\n';
  for (const EvalReport& r : reports) {
    os << r.method;
    for (const CategoryStats& c : r.summary.per_category) {
      const auto s = c.sensitivity();
      os << ',';
      if (s) {
        os << std::fixed << std::setprecision(4) << *s;
        os.unsetf(std::ios::floatfield);
      } else {
        os << "n/a";
      }
    }
    os << '\n';
  }
}

void write_recall_svg(std::ostream& os, std::span<const EvalReport> reports) {
  for (const EvalReport& r : reports) {
    if (r.thresholds != reports.front().thresholds) {
      throw ValidationError("reports '" + reports.front().method + "' and '" + r.method +
                            "' use different IoU threshold grids");
    }
  }
  static const std::array<const char*, 6> colors = {"#1f77b4", "#d62728", "#2ca02c",
                                                    "#ff7f0e", "#9467bd", "#8c564b"};
  const double w = 520, h = 380, left = 60, right = 160, top = 20, bottom = 50;
  const double pw = w - left - right, ph = h - top - bottom;
  auto sx = [&](double t) { return left + t * pw; };
  auto sy = [&](double r) { return top + (1.0 - r) * ph; };

  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" viewBox=\"0 0 " << w << ' ' << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<g class=\"axes\" stroke=\"black\">\n";
  os << "<line x1=\"" << sx(0) << "\" y1=\"" << sy(0) << "\" x2=\"" << sx(1) << "\" y2=\"" << sy(0)
     << "\"/>\n";
  os << "<line x1=\"" << sx(0) << "\" y1=\"" << sy(0) << "\" x2=\"" << sx(0) << "\" y2=\"" << sy(1)
     << "\"/>\n";
  for (int i = 0; i <= 10; ++i) {
    const double v = i / 10.0;
    os << "<line x1=\"" << sx(v) << "\" y1=\"" << sy(0) << "\" x2=\"" << sx(v) << "\" y2=\""
       << sy(0) + 4 << "\"/>\n";
    os << "<line x1=\"" << sx(0) - 4 << "\" y1=\"" << sy(v) << "\" x2=\"" << sx(0) << "\" y2=\""
       << sy(v) << "\"/>\n";
  }
  os << "</g>\n<g class=\"ticks\" stroke=\"none\">\n";
  for (int i = 0; i <= 10; i += 2) {
    const double v = i / 10.0;
    os << "<text x=\"" << sx(v) << "\" y=\"" << sy(0) + 16 << "\" text-anchor=\"middle\">"
       << std::setprecision(1) << v << std::setprecision(2) << "</text>\n";
    os << "<text x=\"" << sx(0) - 7 << "\" y=\"" << sy(v) + 4 << "\" text-anchor=\"end\">"
       << std::setprecision(1) << v << std::setprecision(2) << "</text>\n";
  }
  os << "</g>\n";
  os << "<text class=\"xlabel\" x=\"" << sx(0.5) << "\" y=\"" << h - 12
     << "\" text-anchor=\"middle\">IoU threshold</text>\n";
  os << "<text class=\"ylabel\" x=\"16\" y=\"" << sy(0.5) << "\" text-anchor=\"middle\" "
     << "transform=\"rotate(-90 16 " << sy(0.5) << ")\">Recall</text>\n";
  for (std::size_t k = 0; k < reports.size(); ++k) {
    const EvalReport& r = reports[k];
    const char* color = colors[k % colors.size()];
    os << "<polyline class=\"curve\" fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
      if (i) os << ' ';
      os << sx(r.thresholds[i]) << ',' << sy(r.recall[i]);
    }
    os << "\"/>\n";
    const double ly = top + 14 + 18.0 * static_cast<double>(k);
    os << "<line class=\"legend\" x1=\"" << w - right + 12 << "\" y1=\"" << ly << "\" x2=\""
       << w - right + 32 << "\" y2=\"" << ly << "\" stroke=\"" << color
       << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << w - right + 38 << "\" y=\"" << ly + 4 << "\">" << r.method
       << "</text>\n";
  }
  os << "</svg>\n";
  os.unsetf(std::ios::floatfield);
}

void emit_report(const std::filesystem::path& dir, const EvalReport& report) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const std::span<const EvalReport> one(&report, 1);
  auto open = [](const std::filesystem::path& p) {
    std::ofstream out(p);
    if (!out) throw IoError("cannot open " + p.string() + " for writing");
    return out;
  };
  {
    auto out = open(dir / "report.json");
    out << to_json(report).dump(2) << '\n';
    if (!out) throw IoError("error writing " + (dir / "report.json").string());
  }
  {
    auto out = open(dir / "report.csv");
    write_sensitivity_csv(out, one);
    if (!out) throw IoError("error writing " + (dir / "report.csv").string());
  }
  {
    auto out = open(dir / "recall_curve.svg");
    write_recall_svg(out, one);
    if (!out) throw IoError("error writing " + (dir / "recall_curve.svg").string());
  }
}

EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return report_from_json(j);
}

}  // namespace mld
