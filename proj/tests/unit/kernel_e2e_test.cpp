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
#include <random>

#include "mld/image_io.hpp"
#include "mld/kernels.hpp"
#include "mld/synthdata.hpp"
#include "mld/training.hpp"

namespace mld {
namespace {

using kernels::Isa;

struct Evaluated {
  double loss;
  std::vector<double> grads;
};

Evaluated evaluate_with(Isa isa, Detector& det, const Tensor& image,
                        const TrainingTargets& targets) {
  kernels::set_active(isa);
  for (auto& [name, p] : det.parameters()) p->grad = Tensor();
  const DetectorForward fwd = det.forward(image);
  const LossTerms l = total_loss(det, fwd, targets, LossConfig{});
  backward(l.total);
  Evaluated e{item(l.total), {}};
  for (auto& [name, p] : det.parameters()) {
    const Tensor& g = p->grad_buffer();
    e.grads.insert(e.grads.end(), g.values().begin(), g.values().end());
  }
  return e;
}

TEST(KernelEquivalence, EndToEndLossAndGradients) {
  if (!kernels::isa_supported(Isa::avx2)) GTEST_SKIP() << "no AVX2";
  for (ArchMode mode : {ArchMode::plain, ArchMode::fpn, ArchMode::lfpn}) {
    DetectorConfig cfg;
    cfg.input_size = 64;
    cfg.pyramid.mode = mode;
    cfg.pyramid.channels = cfg.pyramid.lift_channels = 16;
    cfg.head.hidden = 32;
    Detector det(cfg, 3);
    SynthConfig sc;
    sc.image_size = 64;
    const SceneRecord r = generate_scene(sc, 0);
    const Tensor image = to_tensor(r.image);

    kernels::set_active(Isa::scalar);
    std::mt19937_64 rng(1);
    const TrainingTargets targets = prepare_targets(det, det.forward(image), r.annotations, rng);
    ASSERT_FALSE(targets.rois.rois.empty());

    const Evaluated s = evaluate_with(Isa::scalar, det, image, targets);
    const Evaluated v = evaluate_with(Isa::avx2, det, image, targets);
    kernels::set_active(Isa::scalar);
    EXPECT_LE(std::abs(s.loss - v.loss), 1e-9 * std::abs(s.loss)) << to_string(mode);
    double num = 0, den = 0;
    for (std::size_t i = 0; i < s.grads.size(); ++i) {
      num += (s.grads[i] - v.grads[i]) * (s.grads[i] - v.grads[i]);
      den += s.grads[i] * s.grads[i];
    }
    EXPECT_LE(std::sqrt(num), 1e-9 * std::sqrt(den)) << to_string(mode);
  }
}

}  // namespace
}  // namespace mld
