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

#include "mld/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "mld/kernels.hpp"

namespace mld {

Tensor& Node::grad_buffer() {
  if (!grad.same_shape(value)) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

double item(const Var& v) {
  if (v->value.size() != 1) {
    throw SizeError("item() on tensor of shape " + v->value.shape_str());
  }
  return v->value[0];
}

void backward(const Var& root) {
  if (root->value.size() != 1) {
    throw SizeError("backward() root must hold a single element");
  }
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor out(logits.shape());
  const int n = logits.dim(0), k = logits.dim(1);
  for (int i = 0; i < n; ++i) {
    const double* row = logits.data() + static_cast<std::size_t>(i) * k;
    double* o = out.data() + static_cast<std::size_t>(i) * k;
    const double mx = *std::max_element(row, row + k);
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += (o[j] = std::exp(row[j] - mx));
    for (int j = 0; j < k; ++j) o[j] /= s;
  }
  return out;
}

namespace ops {
namespace {

using kernels::Trans;

Var make_node(Tensor value, std::vector<Var> inputs,
              std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Var& v) { return v->requires_grad; });
  if (n->requires_grad) {
    n->inputs = std::move(inputs);
    n->backward_fn = std::move(fn);
  }
  return n;
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw SizeError(msg);
}

struct ConvGeometry {
  int c, h, w, o, k, stride, pad, ho, wo;
  std::size_t rows() const { return static_cast<std::size_t>(c) * k * k; }
  std::size_t cols() const { return static_cast<std::size_t>(ho) * wo; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

void im2col(const ConvGeometry& g, const double* x, double* col) {
  for (int ci = 0; ci < g.c; ++ci) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        double* dst = col + ((static_cast<std::size_t>(ci) * g.k + ky) * g.k + kx) * g.cols();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          double* drow = dst + static_cast<std::size_t>(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(drow, drow + g.wo, 0.0);
            continue;
          }
          const double* srow = x + (static_cast<std::size_t>(ci) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            drow[ox] = (ix < 0 || ix >= g.w) ? 0.0 : srow[ix];
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* col, double* x) {
  for (int ci = 0; ci < g.c; ++ci) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const double* src = col + ((static_cast<std::size_t>(ci) * g.k + ky) * g.k + kx) * g.cols();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const double* srow = src + static_cast<std::size_t>(oy) * g.wo;
          double* drow = x + (static_cast<std::size_t>(ci) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

// Bilinear sample taps shared by every channel of one RoI bin.
struct Tap {
  std::size_t offset;
  double weight;
};

void bilinear_taps(double y, double x, int h, int w, double scale,
                   std::vector<Tap>& taps) {
  if (y < -1.0 || y > h || x < -1.0 || x > w) return;
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  int y0 = static_cast<int>(y), x0 = static_cast<int>(x), y1, x1;
  if (y0 >= h - 1) {
    y0 = y1 = h - 1;
    y = y0;
  } else {
    y1 = y0 + 1;
  }
  if (x0 >= w - 1) {
    x0 = x1 = w - 1;
    x = x0;
  } else {
    x1 = x0 + 1;
  }
  const double ly = y - y0, lx = x - x0, hy = 1.0 - ly, hx = 1.0 - lx;
  auto at = [w](int yy, int xx) {
    return static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx);
  };
  taps.push_back({at(y0, x0), hy * hx * scale});
  taps.push_back({at(y0, x1), hy * lx * scale});
  taps.push_back({at(y1, x0), ly * hx * scale});
  taps.push_back({at(y1, x1), ly * lx * scale});
}

void check_roi(const Box& r) {
  if (r.w() < 1.0 || r.h() < 1.0) {
    throw std::invalid_argument("degenerate RoI smaller than one pixel");
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  require(xv.rank() == 3, "conv2d input must be [C, H, W], got " + xv.shape_str());
  require(wv.rank() == 4 && wv.dim(2) == wv.dim(3) && wv.dim(1) == xv.dim(0),
          "conv2d weight " + wv.shape_str() + " incompatible with input " +
              xv.shape_str());
  require(b->value.size() == static_cast<std::size_t>(wv.dim(0)),
          "conv2d bias size mismatch");
  ConvGeometry g{xv.dim(0), xv.dim(1), xv.dim(2), wv.dim(0), wv.dim(2),
                 stride,    pad,       0,         0};
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  require(g.ho > 0 && g.wo > 0, "conv2d output would be empty");

  auto col = std::make_shared<std::vector<double>>();
  const double* colp = xv.data();
  if (!g.pointwise()) {
    col->resize(g.rows() * g.cols());
    im2col(g, xv.data(), col->data());
    colp = col->data();
  }
  Tensor out({g.o, g.ho, g.wo});
  const std::size_t hw = g.cols();
  for (int oc = 0; oc < g.o; ++oc) {
    std::fill(out.data() + oc * hw, out.data() + (oc + 1) * hw, b->value[oc]);
  }
  kernels::gemm(Trans::no, Trans::no, g.o, hw, g.rows(), wv.data(), g.rows(),
                colp, hw, 1.0, out.data(), hw);

  return make_node(std::move(out), {x, w, b}, [x, w, b, g, col](Node& self) {
    const std::size_t hw = g.cols();
    const double* dy = self.grad.data();
    const double* colp = g.pointwise() ? x->value.data() : col->data();
    if (w->requires_grad) {
      kernels::gemm(Trans::no, Trans::yes, g.o, g.rows(), hw, dy, hw, colp, hw,
                    1.0, w->grad_buffer().data(), g.rows());
    }
    if (b->requires_grad) {
      Tensor& db = b->grad_buffer();
      for (int oc = 0; oc < g.o; ++oc) {
        double s = 0.0;
        for (std::size_t i = 0; i < hw; ++i) s += dy[oc * hw + i];
        db[oc] += s;
      }
    }
    if (x->requires_grad) {
      Tensor& dx = x->grad_buffer();
      if (g.pointwise()) {
        kernels::gemm(Trans::yes, Trans::no, g.rows(), hw, g.o,
                      w->value.data(), g.rows(), dy, hw, 1.0, dx.data(), hw);
      } else {
        std::vector<double> dcol(g.rows() * hw, 0.0);
        kernels::gemm(Trans::yes, Trans::no, g.rows(), hw, g.o,
                      w->value.data(), g.rows(), dy, hw, 0.0, dcol.data(), hw);
        col2im(g, dcol.data(), dx.data());
      }
    }
  });
}

Var add(const Var& a, const Var& b) {
  require(a->value.same_shape(b->value), "add shape mismatch: " +
                                             a->value.shape_str() + " vs " +
                                             b->value.shape_str());
  Tensor out = a->value;
  kernels::axpy(out.size(), 1.0, b->value.data(), out.data());
  return make_node(std::move(out), {a, b}, [a, b](Node& self) {
    for (const Var& v : {a, b}) {
      if (v->requires_grad) {
        kernels::axpy(self.grad.size(), 1.0, self.grad.data(),
                      v->grad_buffer().data());
      }
    }
  });
}

Var relu(const Var& a) {
  Tensor out = a->value;
  for (double& v : out.values()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
  return make_node(std::move(out), {a}, [a](Node& self) {
    Tensor& da = a->grad_buffer();
    for (std::size_t i = 0; i < da.size(); ++i) {
      if (a->value[i] > 0.0) da[i] += self.grad[i];
    }
  });
}

Var upsample2x(const Var& a) {
  const Tensor& av = a->value;
  require(av.rank() == 3, "upsample2x expects [C, H, W]");
  const int c = av.dim(0), h = av.dim(1), w = av.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (int ci = 0; ci < c; ++ci) {
    for (int y = 0; y < 2 * h; ++y) {
      for (int x = 0; x < 2 * w; ++x) out.at(ci, y, x) = av.at(ci, y / 2, x / 2);
    }
  }
  return make_node(std::move(out), {a}, [a, c, h, w](Node& self) {
    Tensor& da = a->grad_buffer();
    for (int ci = 0; ci < c; ++ci) {
      for (int y = 0; y < 2 * h; ++y) {
        for (int x = 0; x < 2 * w; ++x) {
          da.at(ci, y / 2, x / 2) += self.grad.at(ci, y, x);
        }
      }
    }
  });
}

Var roi_align(const Var& feature, const std::vector<Box>& rois, int pool_size,
              double spatial_scale, int sampling_ratio) {
  const Tensor& f = feature->value;
  require(f.rank() == 3, "roi_align expects a [C, H, W] feature map");
  require(pool_size >= 1, "pool_size must be >= 1");
  const int c = f.dim(0), h = f.dim(1), w = f.dim(2);
  const int bins = pool_size * pool_size;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t per_roi = static_cast<std::size_t>(c) * bins;
  const int n = static_cast<int>(rois.size());

  // taps[r * bins + b] lists the weighted feature offsets of one bin.
  auto taps = std::make_shared<std::vector<std::vector<Tap>>>(
      static_cast<std::size_t>(n) * bins);
  for (int r = 0; r < n; ++r) {
    const Box& roi = rois[r];
    check_roi(roi);
    const double x1 = roi.x() * spatial_scale - 0.5;
    const double y1 = roi.y() * spatial_scale - 0.5;
    const double rw = roi.w() * spatial_scale;
    const double rh = roi.h() * spatial_scale;
    const double bw = rw / pool_size, bh = rh / pool_size;
    const int gw = sampling_ratio > 0 ? sampling_ratio
                                      : std::max(1, static_cast<int>(std::ceil(bw)));
    const int gh = sampling_ratio > 0 ? sampling_ratio
                                      : std::max(1, static_cast<int>(std::ceil(bh)));
    const double inv_count = 1.0 / (gw * gh);
    for (int ph = 0; ph < pool_size; ++ph) {
      for (int pw = 0; pw < pool_size; ++pw) {
        auto& t = (*taps)[static_cast<std::size_t>(r) * bins + ph * pool_size + pw];
        t.reserve(static_cast<std::size_t>(4) * gw * gh);
        for (int iy = 0; iy < gh; ++iy) {
          const double y = y1 + ph * bh + (iy + 0.5) * bh / gh;
          for (int ix = 0; ix < gw; ++ix) {
            const double x = x1 + pw * bw + (ix + 0.5) * bw / gw;
            bilinear_taps(y, x, h, w, inv_count, t);
          }
        }
      }
    }
  }

  Tensor out({n, static_cast<int>(per_roi)});
  for (int r = 0; r < n; ++r) {
    for (int b = 0; b < bins; ++b) {
      const auto& t = (*taps)[static_cast<std::size_t>(r) * bins + b];
      for (int ci = 0; ci < c; ++ci) {
        const double* fp = f.data() + ci * plane;
        double s = 0.0;
        for (const Tap& tp : t) s += tp.weight * fp[tp.offset];
        out[r * per_roi + static_cast<std::size_t>(ci) * bins + b] = s;
      }
    }
  }
  return make_node(std::move(out), {feature},
                   [feature, taps, n, c, bins, plane, per_roi](Node& self) {
                     Tensor& df = feature->grad_buffer();
                     for (int r = 0; r < n; ++r) {
                       for (int b = 0; b < bins; ++b) {
                         const auto& t = (*taps)[static_cast<std::size_t>(r) * bins + b];
                         for (int ci = 0; ci < c; ++ci) {
                           const double g = self.grad[r * per_roi + static_cast<std::size_t>(ci) * bins + b];
                           if (g == 0.0) continue;
                           double* dp = df.data() + ci * plane;
                           for (const Tap& tp : t) dp[tp.offset] += tp.weight * g;
                         }
                       }
                     }
                   });
}

Var roi_max_pool(const Var& feature, const std::vector<Box>& rois,
                 int pool_size, double spatial_scale) {
  const Tensor& f = feature->value;
  require(f.rank() == 3, "roi_max_pool expects a [C, H, W] feature map");
  require(pool_size >= 1, "pool_size must be >= 1");
  const int c = f.dim(0), h = f.dim(1), w = f.dim(2);
  const int bins = pool_size * pool_size;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t per_roi = static_cast<std::size_t>(c) * bins;
  const int n = static_cast<int>(rois.size());
  Tensor out({n, static_cast<int>(per_roi)});
  auto argmax = std::make_shared<std::vector<long>>(out.size(), -1);
  for (int r = 0; r < n; ++r) {
    const Box& roi = rois[r];
    check_roi(roi);
    const int sx = static_cast<int>(std::floor(roi.x() * spatial_scale));
    const int sy = static_cast<int>(std::floor(roi.y() * spatial_scale));
    const int ex = static_cast<int>(std::ceil(roi.right() * spatial_scale));
    const int ey = static_cast<int>(std::ceil(roi.bottom() * spatial_scale));
    const double rw = std::max(ex - sx, 1), rh = std::max(ey - sy, 1);
    for (int ph = 0; ph < pool_size; ++ph) {
      const int hs = std::clamp(sy + static_cast<int>(std::floor(ph * rh / pool_size)), 0, h);
      const int he = std::clamp(sy + static_cast<int>(std::ceil((ph + 1) * rh / pool_size)), 0, h);
      for (int pw = 0; pw < pool_size; ++pw) {
        const int ws = std::clamp(sx + static_cast<int>(std::floor(pw * rw / pool_size)), 0, w);
        const int we = std::clamp(sx + static_cast<int>(std::ceil((pw + 1) * rw / pool_size)), 0, w);
        for (int ci = 0; ci < c; ++ci) {
          const std::size_t o = r * per_roi + static_cast<std::size_t>(ci) * bins + ph * pool_size + pw;
          double best = -std::numeric_limits<double>::infinity();
          long arg = -1;
          for (int y = hs; y < he; ++y) {
            for (int x = ws; x < we; ++x) {
              const std::size_t idx = ci * plane + static_cast<std::size_t>(y) * w + x;
              if (f[idx] > best) {
                best = f[idx];
                arg = static_cast<long>(idx);
              }
            }
          }
          out[o] = arg < 0 ? 0.0 : best;
          (*argmax)[o] = arg;
        }
      }
    }
  }
  return make_node(std::move(out), {feature}, [feature, argmax](Node& self) {
    Tensor& df = feature->grad_buffer();
    for (std::size_t i = 0; i < argmax->size(); ++i) {
      if ((*argmax)[i] >= 0) df[static_cast<std::size_t>((*argmax)[i])] += self.grad[i];
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  require(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(1),
          "linear: input " + xv.shape_str() + " incompatible with weight " +
              wv.shape_str());
  require(b->value.size() == static_cast<std::size_t>(wv.dim(0)),
          "linear bias size mismatch");
  const std::size_t n = xv.dim(0), f = xv.dim(1), o = wv.dim(0);
  Tensor out({static_cast<int>(n), static_cast<int>(o)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(b->value.data(), b->value.data() + o, out.data() + i * o);
  }
  kernels::gemm(Trans::no, Trans::yes, n, o, f, xv.data(), f, wv.data(), f, 1.0,
                out.data(), o);
  return make_node(std::move(out), {x, w, b}, [x, w, b, n, f, o](Node& self) {
    const double* dy = self.grad.data();
    if (x->requires_grad) {
      kernels::gemm(Trans::no, Trans::no, n, f, o, dy, o, w->value.data(), f,
                    1.0, x->grad_buffer().data(), f);
    }
    if (w->requires_grad) {
      kernels::gemm(Trans::yes, Trans::no, o, f, n, dy, o, x->value.data(), f,
                    1.0, w->grad_buffer().data(), f);
    }
    if (b->requires_grad) {
      Tensor& db = b->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < o; ++j) db[j] += dy[i * o + j];
      }
    }
  });
}

Var gather(const Var& x, const std::vector<std::size_t>& indices) {
  Tensor out({static_cast<int>(indices.size())});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] < x->value.size(), "gather index out of range");
    out[i] = x->value[indices[i]];
  }
  return make_node(std::move(out), {x}, [x, indices](Node& self) {
    Tensor& dx = x->grad_buffer();
    for (std::size_t i = 0; i < indices.size(); ++i) dx[indices[i]] += self.grad[i];
  });
}

Var weighted_sum(const Var& x, const std::vector<double>& weights) {
  require(x->value.size() == weights.size(), "weighted_sum size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * x->value[i];
  return make_node(Tensor({1}, s), {x}, [x, weights](Node& self) {
    const double g = self.grad[0];
    Tensor& dx = x->grad_buffer();
    for (std::size_t i = 0; i < weights.size(); ++i) dx[i] += g * weights[i];
  });
}

Var bce_with_logits_sum(const Var& logits, const std::vector<double>& targets) {
  require(logits->value.size() == targets.size(), "bce target size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double z = logits->value[i];
    s += std::max(z, 0.0) - z * targets[i] + std::log1p(std::exp(-std::abs(z)));
  }
  return make_node(Tensor({1}, s), {logits}, [logits, targets](Node& self) {
    const double g = self.grad[0];
    Tensor& dz = logits->grad_buffer();
    for (std::size_t i = 0; i < targets.size(); ++i) {
      dz[i] += g * (sigmoid(logits->value[i]) - targets[i]);
    }
  });
}

Var smooth_l1_sum(const Var& pred, const std::vector<double>& target,
                  double beta) {
  require(pred->value.size() == target.size(), "smooth_l1 target size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = std::abs(pred->value[i] - target[i]);
    s += d < beta ? 0.5 * d * d / beta : d - 0.5 * beta;
  }
  return make_node(Tensor({1}, s), {pred}, [pred, target, beta](Node& self) {
    const double g = self.grad[0];
    Tensor& dp = pred->grad_buffer();
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double d = pred->value[i] - target[i];
      const double dd = std::abs(d) < beta ? d / beta : (d > 0 ? 1.0 : -1.0);
      dp[i] += g * dd;
    }
  });
}

Var softmax_cross_entropy_sum(const Var& logits, const std::vector<int>& labels) {
  const Tensor& z = logits->value;
  require(z.rank() == 2 && static_cast<std::size_t>(z.dim(0)) == labels.size(),
          "softmax_cross_entropy label count mismatch");
  const int k = z.dim(1);
  Tensor probs = softmax_rows(z);
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && labels[i] < k, "class label out of range");
    const double* row = z.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double se = 0.0;
    for (int j = 0; j < k; ++j) se += std::exp(row[j] - mx);
    s += mx + std::log(se) - row[labels[i]];
  }
  return make_node(Tensor({1}, s), {logits},
                   [logits, labels, probs = std::move(probs), k](Node& self) {
                     const double g = self.grad[0];
                     Tensor& dz = logits->grad_buffer();
                     for (std::size_t i = 0; i < labels.size(); ++i) {
                       for (int j = 0; j < k; ++j) {
                         const double t = j == labels[i] ? 1.0 : 0.0;
                         dz[i * k + j] += g * (probs[i * k + j] - t);
                       }
                     }
                   });
}

Var scale(const Var& a, double s) {
  Tensor out = a->value;
  for (double& v : out.values()) v *= s;
  return make_node(std::move(out), {a}, [a, s](Node& self) {
    kernels::axpy(self.grad.size(), s, self.grad.data(), a->grad_buffer().data());
  });
}

Var sum(const std::vector<Var>& terms) {
  double s = 0.0;
  for (const Var& t : terms) s += item(t);
  return make_node(Tensor({1}, s), terms, [terms](Node& self) {
    for (const Var& t : terms) {
      if (t->requires_grad) t->grad_buffer()[0] += self.grad[0];
    }
  });
}

}  // namespace ops
}  // namespace mld
