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

// Architecture comparison: trains every (arch, centre-focus) configuration
// for several seeds and tabulates validation sensitivity.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mld/config.hpp"
#include "mld/evaluation.hpp"
#include "mld/training.hpp"

namespace mld {

/// "plain", "fpn", "lfpn", with "+cf" when centre-focus assignment is on.
std::string method_name(const RunConfig& cfg);

struct RunOutcome {
  std::string method;
  std::uint64_t seed = 0;
  EvalReport report;
  std::vector<EpochMetrics> trace;
};

/// Trains a fresh detector (init and data order seeded by cfg.train.seed),
/// runs it on `val` and scores the detections.
RunOutcome train_and_evaluate(std::span<const Sample> train_set, std::span<const Sample> val,
                              const RunConfig& cfg, const MatchCriterion& criterion,
                              std::vector<Detection>* detections = nullptr);

struct TrendCheck {
  std::string description;
  bool holds = false;
};

struct Comparison {
  std::vector<RunOutcome> runs;
  std::vector<EvalReport> methods;  // seeds pooled, one per configuration
  std::vector<TrendCheck> trends;
};

/// Pools per-seed reports of one method: counts are summed and the recall
/// curve is averaged. With a fixed validation set the pooled sensitivity is
/// the mean over seeds.
EvalReport pool_reports(const std::string& method, std::span<const EvalReport> reports);

/// lfpn >= fpn >= plain on categories 1 and 2, checked separately for each
/// centre-focus setting present in `methods`.
std::vector<TrendCheck> check_small_lesion_trend(std::span<const EvalReport> methods);

Comparison run_comparison(std::span<const Sample> train_set, std::span<const Sample> val,
                          std::span<const RunConfig> configs,
                          std::span<const std::uint64_t> seeds,
                          const MatchCriterion& criterion,
                          const std::function<void(const RunOutcome&)>& on_run = {});

/// The six configurations {plain, fpn, lfpn} x {cf off, cf on} over `base`.
std::vector<RunConfig> architecture_grid(const RunConfig& base);

}  // namespace mld
