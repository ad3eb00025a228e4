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

#include "mld/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

namespace mld {

namespace {

bool all_finite(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(),
                     [](double v) { return std::isfinite(v); });
}

}  // namespace

std::pair<Var, Var> rpn_loss(std::span<const RpnLevelView> levels,
                             const RpnTargets& targets,
                             const AnchorSample& sample, double beta) {
  const std::size_t total = sample.positives.size() + sample.negatives.size();
  if (total == 0) return {constant(Tensor({1})), constant(Tensor({1}))};
  const double norm = 1.0 / static_cast<double>(total);

  std::vector<std::size_t> all = sample.positives;
  all.insert(all.end(), sample.negatives.begin(), sample.negatives.end());
  std::sort(all.begin(), all.end());

  std::vector<Var> cls_terms, reg_terms;
  for (std::size_t li = 0; li < levels.size(); ++li) {
    const RpnLevelView& lv = levels[li];
    const Tensor& lg = lv.logits->value;
    const int a = lg.dim(0), h = lg.dim(1), w = lg.dim(2);
    const std::size_t begin = lv.anchor_offset;
    const std::size_t end = begin + static_cast<std::size_t>(a) * h * w;

    std::vector<std::size_t> cls_idx;
    std::vector<double> cls_tgt;
    for (std::size_t i : all) {
      if (i < begin || i >= end) continue;
      cls_idx.push_back(logit_offset(i - begin, h, w, a));
      cls_tgt.push_back(targets.labels[i] == AnchorLabel::positive ? 1.0 : 0.0);
    }
    if (!cls_idx.empty()) {
      cls_terms.push_back(ops::bce_with_logits_sum(ops::gather(lv.logits, cls_idx), cls_tgt));
    }

    std::vector<std::size_t> reg_idx;
    std::vector<double> reg_tgt;
    for (std::size_t i : sample.positives) {
      if (i < begin || i >= end) continue;
      for (int k = 0; k < 4; ++k) {
        reg_idx.push_back(delta_offset(i - begin, k, h, w, a));
        reg_tgt.push_back(targets.deltas[i][k]);
      }
    }
    if (!reg_idx.empty()) {
      reg_terms.push_back(ops::smooth_l1_sum(ops::gather(lv.deltas, reg_idx), reg_tgt, beta));
    }
  }
  Var cls = cls_terms.empty() ? constant(Tensor({1})) : ops::scale(ops::sum(cls_terms), norm);
  Var reg = reg_terms.empty() ? constant(Tensor({1})) : ops::scale(ops::sum(reg_terms), norm);
  return {cls, reg};
}

std::pair<Var, Var> head_loss(const HeadOutput& out, std::span<const int> labels,
                              std::span<const Deltas> deltas, double beta) {
  const std::size_t n = labels.size();
  if (n == 0) return {constant(Tensor({1})), constant(Tensor({1}))};
  const double norm = 1.0 / static_cast<double>(n);
  Var cls = ops::scale(ops::softmax_cross_entropy_sum(
                           out.logits, std::vector<int>(labels.begin(), labels.end())),
                       norm);
  std::vector<std::size_t> idx;
  std::vector<double> tgt;
  const std::size_t cols = 4 * kNumCategories;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] <= 0) continue;
    for (int k = 0; k < 4; ++k) {
      idx.push_back(i * cols + 4 * static_cast<std::size_t>(labels[i] - 1) + k);
      tgt.push_back(deltas[i][k]);
    }
  }
  Var reg = idx.empty() ? constant(Tensor({1}))
                        : ops::scale(ops::smooth_l1_sum(ops::gather(out.deltas, idx), tgt, beta),
                                     norm);
  return {cls, reg};
}

TrainingTargets prepare_targets(const Detector& model, const DetectorForward& fwd,
                                std::span<const Annotation> gts,
                                std::mt19937_64& rng) {
  const DetectorConfig& cfg = model.config();
  TrainingTargets t;
  t.rpn = assign_targets(model.anchor_boxes(), gts, cfg.assignment, cfg.input_size,
                         cfg.input_size);
  t.sample = sample_anchors(t.rpn, cfg.rpn.sampling, rng);
  const std::vector<Proposal> props = model.proposals(fwd);
  t.rois = sample_rois(props, gts, cfg.head, cfg.assignment, rng);
  return t;
}

LossTerms total_loss(const Detector& model, const DetectorForward& fwd,
                     const TrainingTargets& targets, const LossConfig& cfg) {
  std::vector<RpnLevelView> views;
  for (std::size_t i = 0; i < fwd.rpn_logits.size(); ++i) {
    views.push_back({fwd.rpn_logits[i], fwd.rpn_deltas[i], model.anchor_offset(i)});
  }
  LossTerms l;
  std::tie(l.rpn_cls, l.rpn_reg) = rpn_loss(views, targets.rpn, targets.sample, cfg.rpn_beta);

  std::vector<std::size_t> order;
  const HeadOutput out = model.head_forward(fwd, targets.rois.rois, order);
  std::vector<int> labels;
  std::vector<Deltas> deltas;
  for (std::size_t i : order) {
    labels.push_back(targets.rois.labels[i]);
    deltas.push_back(targets.rois.deltas[i]);
  }
  std::tie(l.head_cls, l.head_reg) = head_loss(out, labels, deltas, cfg.head_beta);
  l.total = ops::sum({l.rpn_cls, l.rpn_reg, l.head_cls, l.head_reg});
  return l;
}

std::pair<Tensor, std::vector<Annotation>> hflip(const Tensor& image,
                                                 std::span<const Annotation> anns) {
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor out(image.shape());
  for (int ci = 0; ci < c; ++ci) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) out.at(ci, y, x) = image.at(ci, y, w - 1 - x);
    }
  }
  std::vector<Annotation> flipped;
  flipped.reserve(anns.size());
  for (const Annotation& a : anns) {
    flipped.push_back({a.image_id,
                       Box(w - a.box.x() - a.box.w(), a.box.y(), a.box.w(), a.box.h()),
                       a.category});
  }
  return {std::move(out), std::move(flipped)};
}

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("momentum must be in [0, 1)");
  }
  if (weight_decay < 0.0) throw std::invalid_argument("weight decay must be >= 0");
  if (!(lr_decay_at >= 0.0 && lr_decay_at <= 1.0) || !(lr_decay > 0.0)) {
    throw std::invalid_argument("invalid learning-rate decay settings");
  }
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (grad_clip < 0.0) throw std::invalid_argument("grad_clip must be >= 0");
}

SgdOptimizer::SgdOptimizer(ParamList params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& [name, p] : params_) velocity_.emplace_back(p->value.shape());
}

void SgdOptimizer::zero_grad() {
  for (const auto& [name, p] : params_) {
    if (!p->grad.empty()) p->grad.fill(0.0);
  }
}

void SgdOptimizer::step(double lr, double grad_scale, double grad_clip) {
  double sq = 0.0;
  for (const auto& [name, p] : params_) {
    for (double g : p->grad_buffer().values()) sq += g * g;
  }
  const double norm = std::sqrt(sq) * grad_scale;
  double scale = grad_scale;
  if (grad_clip > 0.0 && norm > grad_clip) scale *= grad_clip / norm;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& w = params_[i].second->value;
    const Tensor& g = params_[i].second->grad;
    Tensor& v = velocity_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      v[k] = momentum_ * v[k] + (scale * g[k] + weight_decay_ * w[k]);
      w[k] -= lr * v[k];
    }
  }
}

TrainResult train(Detector& model, std::span<const Sample> data,
                  const TrainConfig& cfg,
                  const std::function<void(const EpochMetrics&)>& on_epoch) {
  cfg.validate();
  TrainResult result;
  if (cfg.epochs == 0 || data.empty()) return result;

  SgdOptimizer opt(model.parameters(), cfg.momentum, cfg.weight_decay);
  std::mt19937_64 order_rng(cfg.seed ^ 0x2545f4914f6cdd1dULL);
  std::mt19937_64 aug_rng(cfg.seed ^ 0x94d049bb133111ebULL);
  std::mt19937_64 sample_rng(cfg.seed ^ 0xd6e8feb86659fd93ULL);
  const int decay_epoch = static_cast<int>(std::floor(cfg.epochs * cfg.lr_decay_at));

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    const double lr = epoch >= decay_epoch && cfg.lr_decay_at < 1.0 ? cfg.lr * cfg.lr_decay
                                                                    : cfg.lr;
    EpochMetrics m;
    m.epoch = epoch + 1;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      opt.zero_grad();
      double step_total = 0.0;
      for (std::size_t bi = start; bi < end; ++bi) {
        const Sample& s = data[order[bi]];
        std::bernoulli_distribution coin(0.5);
        const bool flip = cfg.hflip && coin(aug_rng);
        Tensor image;
        std::vector<Annotation> anns;
        if (flip) {
          std::tie(image, anns) = hflip(s.image, s.annotations);
        } else {
          image = s.image;
          anns = s.annotations;
        }
        const DetectorForward fwd = model.forward(image);
        for (std::size_t li = 0; li < fwd.rpn_logits.size(); ++li) {
          if (!all_finite(fwd.rpn_logits[li]->value) || !all_finite(fwd.rpn_deltas[li]->value)) {
            std::ostringstream os;
            os << "non-finite rpn outputs at epoch " << epoch + 1 << " on image " << s.image_id
               << " (level P" << model.rpn_levels()[li] << ")";
            throw TrainingError(os.str());
          }
        }
        const TrainingTargets targets = prepare_targets(model, fwd, anns, sample_rng);
        const LossTerms l = total_loss(model, fwd, targets, cfg.loss);
        const double total = item(l.total);
        if (!std::isfinite(total)) {
          std::ostringstream os;
          os << "non-finite loss at epoch " << epoch + 1 << " on image " << s.image_id
             << " (rpn_cls=" << item(l.rpn_cls) << " rpn_reg=" << item(l.rpn_reg)
             << " head_cls=" << item(l.head_cls) << " head_reg=" << item(l.head_reg) << ")";
          throw TrainingError(os.str());
        }
        if (total > cfg.divergence_limit) {
          std::ostringstream os;
          os << "training diverged at epoch " << epoch + 1 << ": loss " << total
             << " exceeds " << cfg.divergence_limit;
          throw TrainingError(os.str());
        }
        backward(l.total);
        m.rpn_cls += item(l.rpn_cls);
        m.rpn_reg += item(l.rpn_reg);
        m.head_cls += item(l.head_cls);
        m.head_reg += item(l.head_reg);
        m.total += total;
        step_total += total;
        ++steps;
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      opt.step(lr, inv, cfg.grad_clip);
      result.step_losses.push_back(step_total * inv);
    }
    const double inv = 1.0 / static_cast<double>(steps);
    m.rpn_cls *= inv;
    m.rpn_reg *= inv;
    m.head_cls *= inv;
    m.head_reg *= inv;
    m.total *= inv;
    result.epochs.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

void write_metrics_csv(std::ostream& os, std::span<const EpochMetrics> rows) {
  os << "epoch,rpn_cls,rpn_reg,head_cls,head_reg,total\n";
  os << std::setprecision(10);
  for (const EpochMetrics& m : rows) {
    os << m.epoch << ',' << m.rpn_cls << ',' << m.rpn_reg << ',' << m.head_cls << ','
       << m.head_reg << ',' << m.total << '\n';
  }
}

}  // namespace mld
