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


#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "mld/checkpoint.hpp"
#include "mld/image_io.hpp"
#include "mld/synthdata.hpp"
#include "mld/training.hpp"
#include "support/tiny.hpp"

namespace mld {
namespace {

Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double sd = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, sd);
  for (double& v : t.values()) v = n(rng);
  return t;
}

TEST(Hflip, MirrorFormula) {
  const Tensor img({3, 10, 100});
  const std::vector<Annotation> anns = {{"a", Box(10, 20, 30, 10), 2},
                                        {"a", Box(35, 0, 30, 10), 4}};
  const auto [out, flipped] = hflip(img, anns);
  EXPECT_EQ(flipped[0].box, Box(60, 20, 30, 10));
  EXPECT_EQ(flipped[0].category, 2);
  EXPECT_EQ(flipped[1].box, Box(35, 0, 30, 10));
}

TEST(Hflip, Involution) {
  std::mt19937_64 rng(1);
  const Tensor img = random_tensor({3, 8, 13}, rng);
  const std::vector<Annotation> anns = {{"a", Box(0.5, 1, 3.25, 2), 1},
                                        {"a", Box(9, 0, 4, 8), 3}};
  const auto [once, f1] = hflip(img, anns);
  EXPECT_EQ(once.at(1, 2, 0), img.at(1, 2, 12));
  const auto [twice, f2] = hflip(once, f1);
  EXPECT_EQ(twice, img);
  EXPECT_EQ(f2, anns);
}

struct RpnCase {
  std::vector<Var> logits, deltas;
  std::vector<std::size_t> offsets;
  RpnTargets targets;
  AnchorSample sample;
};

// Two levels: 3 templates on 2x3 and 3 templates on 1x2.
RpnCase random_rpn_case(std::mt19937_64& rng) {
  RpnCase c;
  const std::vector<std::pair<int, int>> grids = {{2, 3}, {1, 2}};
  std::size_t offset = 0;
  for (auto [h, w] : grids) {
    c.logits.push_back(parameter(random_tensor({3, h, w}, rng, 2.0)));
    c.deltas.push_back(parameter(random_tensor({12, h, w}, rng)));
    c.offsets.push_back(offset);
    offset += static_cast<std::size_t>(3 * h * w);
  }
  std::uniform_int_distribution<int> lab(-1, 1);
  std::normal_distribution<double> n;
  for (std::size_t i = 0; i < offset; ++i) {
    const auto l = static_cast<AnchorLabel>(lab(rng));
    c.targets.labels.push_back(l);
    c.targets.matched_gt.push_back(l == AnchorLabel::positive ? 0 : -1);
    c.targets.deltas.push_back(l == AnchorLabel::positive ? Deltas{n(rng), n(rng), n(rng), n(rng)}
                                                          : Deltas{0, 0, 0, 0});
    if (l == AnchorLabel::positive && i % 4 != 0) c.sample.positives.push_back(i);
    if (l == AnchorLabel::negative && i % 3 != 0) c.sample.negatives.push_back(i);
  }
  return c;
}

std::vector<RpnLevelView> views(const RpnCase& c) {
  std::vector<RpnLevelView> v;
  for (std::size_t i = 0; i < c.logits.size(); ++i) {
    v.push_back({c.logits[i], c.deltas[i], c.offsets[i]});
  }
  return v;
}

double smooth_l1(double e, double beta) {
  e = std::abs(e);
  return e < beta ? 0.5 * e * e / beta : e - 0.5 * beta;
}

TEST(RpnLoss, MatchesPerElementReference) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const RpnCase c = random_rpn_case(rng);
    const double beta = 1.0 / 9.0;
    const auto [cls, reg] = rpn_loss(views(c), c.targets, c.sample, beta);

    double ref_cls = 0, ref_reg = 0;
    const double n = static_cast<double>(c.sample.positives.size() + c.sample.negatives.size());
    auto locate = [&](std::size_t i, int& lvl, int& t, int& y, int& x) {
      lvl = i >= c.offsets[1] ? 1 : 0;
      const std::size_t local = i - c.offsets[static_cast<std::size_t>(lvl)];
      const int w = c.logits[static_cast<std::size_t>(lvl)]->value.dim(2);
      t = static_cast<int>(local % 3);
      const int cell = static_cast<int>(local / 3);
      y = cell / w;
      x = cell % w;
    };
    for (int positive = 0; positive < 2; ++positive) {
      for (std::size_t i : positive ? c.sample.positives : c.sample.negatives) {
        int lvl, t, y, x;
        locate(i, lvl, t, y, x);
        const double z = c.logits[static_cast<std::size_t>(lvl)]->value.at(t, y, x);
        const double p = 1.0 / (1.0 + std::exp(-z));
        ref_cls += positive ? -std::log(p) : -std::log(1.0 - p);
        if (!positive) continue;
        for (int k = 0; k < 4; ++k) {
          const double d = c.deltas[static_cast<std::size_t>(lvl)]->value.at(4 * t + k, y, x);
          ref_reg += smooth_l1(d - c.targets.deltas[i][static_cast<std::size_t>(k)], beta);
        }
      }
    }
    EXPECT_NEAR(item(cls), ref_cls / n, 1e-6);
    EXPECT_NEAR(item(reg), ref_reg / n, 1e-6);
  }
}

TEST(RpnLoss, UniformLogitsGiveLn2) {
  std::mt19937_64 rng(3);
  RpnCase c = random_rpn_case(rng);
  for (auto& l : c.logits) l->value.fill(0.0);
  const auto [cls, reg] = rpn_loss(views(c), c.targets, c.sample, 1.0 / 9.0);
  EXPECT_NEAR(item(cls), std::log(2.0), 1e-15);
}

TEST(RpnLoss, PerfectPredictions) {
  std::mt19937_64 rng(4);
  RpnCase c = random_rpn_case(rng);
  for (std::size_t lvl = 0; lvl < 2; ++lvl) {
    Tensor& lg = c.logits[lvl]->value;
    Tensor& dl = c.deltas[lvl]->value;
    const int h = lg.dim(1), w = lg.dim(2);
    const std::size_t count = static_cast<std::size_t>(3 * h * w);
    for (std::size_t a = 0; a < count; ++a) {
      const std::size_t i = c.offsets[lvl] + a;
      const bool pos = c.targets.labels[i] == AnchorLabel::positive;
      lg[logit_offset(a, h, w, 3)] = pos ? 60.0 : -60.0;
      for (int k = 0; k < 4; ++k) dl[delta_offset(a, k, h, w, 3)] = c.targets.deltas[i][k];
    }
  }
  const auto [cls, reg] = rpn_loss(views(c), c.targets, c.sample, 1.0 / 9.0);
  EXPECT_EQ(item(reg), 0.0);
  EXPECT_LT(item(cls), 1e-20);
  EXPECT_GE(item(cls), 0.0);
}

TEST(HeadLoss, MatchesPerElementReference) {
  std::mt19937_64 rng(5);
  const int n = 7;
  HeadOutput out{parameter(random_tensor({n, 5}, rng)), parameter(random_tensor({n, 16}, rng))};
  const std::vector<int> labels = {0, 3, 1, 0, 4, 2, 2};
  std::vector<Deltas> deltas(n);
  std::normal_distribution<double> nd;
  for (auto& d : deltas) d = {nd(rng), nd(rng), nd(rng), nd(rng)};
  const auto [cls, reg] = head_loss(out, labels, deltas, 1.0);
  double ref_cls = 0, ref_reg = 0;
  for (int i = 0; i < n; ++i) {
    double denom = 0;
    for (int k = 0; k < 5; ++k) denom += std::exp(out.logits->value[static_cast<std::size_t>(i * 5 + k)]);
    ref_cls -= std::log(std::exp(out.logits->value[static_cast<std::size_t>(i * 5 + labels[i])]) / denom);
    if (labels[i] == 0) continue;
    for (int k = 0; k < 4; ++k) {
      const double p = out.deltas->value[static_cast<std::size_t>(i * 16 + 4 * (labels[i] - 1) + k)];
      ref_reg += smooth_l1(p - deltas[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)], 1.0);
    }
  }
  EXPECT_NEAR(item(cls), ref_cls / n, 1e-6);
  EXPECT_NEAR(item(reg), ref_reg / n, 1e-6);
}

std::vector<Sample> tiny_dataset(int count, int size) {
  SynthConfig sc;
  sc.image_size = size;
  sc.max_count = {2, 2, 2, 2};
  sc.seed = 11;
  std::vector<Sample> out;
  for (int i = 0; i < count; ++i) {
    const SceneRecord r = generate_scene(sc, static_cast<std::size_t>(i));
    out.push_back({r.image_id, to_tensor(r.image), r.annotations});
  }
  return out;
}

TEST(Train, SameSeedSameTrace) {
  const auto data = tiny_dataset(3, 32);
  TrainConfig tc;
  tc.epochs = 2;
  tc.seed = 9;
  for (ArchMode mode : {ArchMode::plain, ArchMode::fpn, ArchMode::lfpn}) {
    Detector a(tiny::detector(mode), 4), b(tiny::detector(mode), 4);
    const auto ra = train(a, data, tc);
    const auto rb = train(b, data, tc);
    ASSERT_EQ(ra.step_losses.size(), 6u);
    EXPECT_EQ(ra.step_losses, rb.step_losses);
    EXPECT_EQ(encode_checkpoint(a, {}), encode_checkpoint(b, {}));
  }
}

TEST(Train, DifferentSeedDifferentTrace) {
  const auto data = tiny_dataset(3, 32);
  TrainConfig tc;
  tc.epochs = 1;
  Detector a(tiny::detector(ArchMode::fpn), 4), b(tiny::detector(ArchMode::fpn), 4);
  tc.seed = 1;
  const auto ra = train(a, data, tc);
  tc.seed = 2;
  const auto rb = train(b, data, tc);
  EXPECT_NE(ra.step_losses, rb.step_losses);
}

TEST(Train, ZeroEpochsLeavesInitialisation) {
  const auto data = tiny_dataset(2, 32);
  Detector fresh(tiny::detector(ArchMode::lfpn), 21), trained(tiny::detector(ArchMode::lfpn), 21);
  TrainConfig tc;
  tc.epochs = 0;
  const auto r = train(trained, data, tc);
  EXPECT_TRUE(r.epochs.empty());
  EXPECT_EQ(encode_checkpoint(fresh, {}), encode_checkpoint(trained, {}));
}

TEST(Train, LossDecreasesOnSmallSet) {
  const auto data = tiny_dataset(10, 32);
  Detector det(tiny::detector(ArchMode::lfpn), 5);
  TrainConfig tc;
  tc.epochs = 20;
  tc.lr = 0.01;
  std::vector<double> totals;
  train(det, data, tc, [&](const EpochMetrics& m) { totals.push_back(m.total); });
  ASSERT_EQ(totals.size(), 20u);
  EXPECT_LT(totals.back(), totals.front());
}

TEST(Train, NonFiniteLossIsReported) {
  const auto data = tiny_dataset(1, 32);
  Detector det(tiny::detector(ArchMode::plain), 6);
  det.parameters().front().second->value[0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig tc;
  tc.epochs = 1;
  try {
    train(det, data, tc);
    FAIL() << "expected a training error";
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("non-finite"), std::string::npos) << msg;
    EXPECT_NE(msg.find(data[0].image_id), std::string::npos) << msg;
  }
}

TEST(Train, DivergenceHalts) {
  const auto data = tiny_dataset(1, 32);
  Detector det(tiny::detector(ArchMode::plain), 6);
  TrainConfig tc;
  tc.epochs = 1;
  tc.divergence_limit = 1e-3;
  EXPECT_THROW(train(det, data, tc), TrainingError);
}

TEST(Train, MetricsCsvLayout) {
  std::ostringstream os;
  const std::vector<EpochMetrics> rows = {{1, 0.5, 0.25, 1.0, 0.125, 1.875}};
  write_metrics_csv(os, rows);
  EXPECT_EQ(os.str(), "epoch,rpn_cls,rpn_reg,head_cls,head_reg,total\n1,0.5,0.25,1,0.125,1.875\n");
}

TEST(Sgd, MomentumAndWeightDecay) {
  Var w = parameter(Tensor({1}, {2.0}));
  SgdOptimizer opt({{"w", w}}, 0.9, 0.1);
  w->grad_buffer()[0] = 1.0;
  opt.step(0.5, 1.0, 0.0);
  // v = 1 + 0.1 * 2 = 1.2, w = 2 - 0.6.
  EXPECT_DOUBLE_EQ(w->value[0], 1.4);
  opt.step(0.5, 1.0, 0.0);
  // v = 0.9 * 1.2 + 1 + 0.14 = 2.22, w = 1.4 - 1.11.
  EXPECT_NEAR(w->value[0], 0.29, 1e-12);
}

TEST(Sgd, ClipsGlobalNorm) {
  Var a = parameter(Tensor({1}, {0.0})), b = parameter(Tensor({1}, {0.0}));
  SgdOptimizer opt({{"a", a}, {"b", b}}, 0.0, 0.0);
  a->grad_buffer()[0] = 30.0;
  b->grad_buffer()[0] = 40.0;
  opt.step(1.0, 1.0, 10.0);
  EXPECT_NEAR(a->value[0], -6.0, 1e-12);
  EXPECT_NEAR(b->value[0], -8.0, 1e-12);
}

}  // namespace
}  // namespace mld
