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

#include "mld/experiment.hpp"

#include <map>
#include <stdexcept>

namespace mld {

std::string method_name(const RunConfig& cfg) {
  return to_string(cfg.detector.pyramid.mode) +
         (cfg.detector.assignment.cf_enabled ? "+cf" : "");
}

RunOutcome train_and_evaluate(std::span<const Sample> train_set, std::span<const Sample> val,
                              const RunConfig& cfg, const MatchCriterion& criterion,
                              std::vector<Detection>* detections) {
  Detector model(cfg.detector, cfg.train.seed);
  RunOutcome out;
  out.method = method_name(cfg);
  out.seed = cfg.train.seed;
  out.trace = train(model, train_set, cfg.train).epochs;

  std::vector<Detection> dets;
  std::vector<Annotation> gts;
  for (const Sample& s : val) {
    for (Detection& d : model.detect(s.image, s.image_id)) dets.push_back(std::move(d));
    gts.insert(gts.end(), s.annotations.begin(), s.annotations.end());
  }
  const auto thresholds = default_iou_thresholds();
  out.report = evaluate(out.method, dets, gts, criterion, thresholds);
  out.report.config = to_json(to_key_values(cfg));
  if (detections) *detections = std::move(dets);
  return out;
}

EvalReport pool_reports(const std::string& method, std::span<const EvalReport> reports) {
  if (reports.empty()) throw std::invalid_argument("no reports to pool");
  EvalReport p;
  p.method = method;
  p.criterion = reports.front().criterion;
  p.thresholds = reports.front().thresholds;
  p.recall.assign(p.thresholds.size(), 0.0);
  for (const EvalReport& r : reports) {
    if (r.thresholds != p.thresholds) {
      throw std::invalid_argument("cannot pool reports with different threshold grids");
    }
    auto add = [](CategoryStats& a, const CategoryStats& b) {
      a.gt += b.gt;
      a.tp += b.tp;
      a.fn += b.fn;
      a.detections += b.detections;
      a.false_positives += b.false_positives;
    };
    for (int c = 0; c < kNumCategories; ++c) {
      add(p.summary.per_category[c], r.summary.per_category[c]);
      for (int k = 0; k < kNumClasses; ++k) p.confusion[c][k] += r.confusion[c][k];
    }
    add(p.summary.overall, r.summary.overall);
    for (std::size_t i = 0; i < p.recall.size(); ++i) p.recall[i] += r.recall[i];
  }
  for (double& v : p.recall) v /= static_cast<double>(reports.size());
  p.config = {{"pooled_runs", reports.size()}};
  return p;
}

std::vector<TrendCheck> check_small_lesion_trend(std::span<const EvalReport> methods) {
  std::map<std::string, const EvalReport*> by_name;
  for (const EvalReport& r : methods) by_name[r.method] = &r;
  std::vector<TrendCheck> out;
  for (const std::string suffix : {"", "+cf"}) {
    const auto p = by_name.find("plain" + suffix);
    const auto f = by_name.find("fpn" + suffix);
    const auto l = by_name.find("lfpn" + suffix);
    if (p == by_name.end() || f == by_name.end() || l == by_name.end()) continue;
    for (int c = 1; c <= 2; ++c) {
      const auto sp = p->second->summary.per_category[c - 1].sensitivity();
      const auto sf = f->second->summary.per_category[c - 1].sensitivity();
      const auto sl = l->second->summary.per_category[c - 1].sensitivity();
      TrendCheck t;
      t.description = "category " + std::to_string(c) + ": lfpn" + suffix + " >= fpn" + suffix +
                      " >= plain" + suffix;
      t.holds = sp && sf && sl && *sl >= *sf && *sf >= *sp;
      out.push_back(t);
    }
  }
  return out;
}

Comparison run_comparison(std::span<const Sample> train_set, std::span<const Sample> val,
                          std::span<const RunConfig> configs,
                          std::span<const std::uint64_t> seeds,
                          const MatchCriterion& criterion,
                          const std::function<void(const RunOutcome&)>& on_run) {
  if (seeds.empty()) throw std::invalid_argument("comparison needs at least one seed");
  Comparison cmp;
  for (const RunConfig& base : configs) {
    std::vector<EvalReport> per_seed;
    for (std::uint64_t seed : seeds) {
      RunConfig cfg = base;
      cfg.train.seed = seed;
      RunOutcome run = train_and_evaluate(train_set, val, cfg, criterion);
      if (on_run) on_run(run);
      per_seed.push_back(run.report);
      cmp.runs.push_back(std::move(run));
    }
    cmp.methods.push_back(pool_reports(method_name(base), per_seed));
  }
  cmp.trends = check_small_lesion_trend(cmp.methods);
  return cmp;
}

std::vector<RunConfig> architecture_grid(const RunConfig& base) {
  std::vector<RunConfig> out;
  for (bool cf : {false, true}) {
    for (ArchMode mode : {ArchMode::plain, ArchMode::fpn, ArchMode::lfpn}) {
      RunConfig c = base;
      c.detector.pyramid.mode = mode;
      c.detector.assignment.cf_enabled = cf;
      out.push_back(c);
    }
  }
  return out;
}

}  // namespace mld
