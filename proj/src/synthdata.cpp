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

#include "mld/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <random>
#include <set>
#include <stdexcept>

#include "mld/io_error.hpp"
#include "mld/pyramid.hpp"

namespace mld {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Rgb {
  double r, g, b;
};

struct LesionStyle {
  Rgb color;
  double opacity;
  double softness;  // 0 = hard edge; otherwise the fuzzy band width in radii
};

// Indexed by category - 1.
constexpr std::array<LesionStyle, kNumCategories> kStyles = {{
    {{0.30, 0.04, 0.03}, 0.90, 0.0},
    {{0.24, 0.02, 0.02}, 0.95, 0.0},
    {{0.98, 0.88, 0.35}, 1.00, 0.0},
    {{0.90, 0.86, 0.74}, 0.80, 0.5},
}};

class Canvas {
 public:
  explicit Canvas(int size) : size_(size), px_(static_cast<std::size_t>(size) * size * 3) {}

  double& at(int x, int y, int c) {
    return px_[(static_cast<std::size_t>(y) * size_ + x) * 3 + c];
  }
  void blend(int x, int y, const Rgb& col, double alpha) {
    if (alpha <= 0.0) return;
    alpha = std::min(alpha, 1.0);
    at(x, y, 0) += alpha * (col.r - at(x, y, 0));
    at(x, y, 1) += alpha * (col.g - at(x, y, 1));
    at(x, y, 2) += alpha * (col.b - at(x, y, 2));
  }
  int size() const { return size_; }

  RgbImage quantize(std::mt19937_64& rng, double noise) const {
    RgbImage img(size_, size_);
    std::normal_distribution<double> n(0.0, noise);
    for (std::size_t i = 0; i < px_.size(); ++i) {
      const double v = std::clamp(px_[i] + n(rng), 0.0, 1.0);
      img.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return img;
  }

 private:
  int size_;
  std::vector<double> px_;
};

void paint_fundus(Canvas& cv, double radius, std::mt19937_64& rng) {
  const int s = cv.size();
  const double c = s / 2.0;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double phase = 2.0 * std::numbers::pi * u(rng);
  const double tint = 0.9 + 0.2 * u(rng);
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const double dx = x + 0.5 - c, dy = y + 0.5 - c;
      const double r = std::sqrt(dx * dx + dy * dy) / radius;
      const double edge = std::clamp((1.0 - r) * radius, 0.0, 1.0);
      const double shade =
          (1.0 - 0.35 * r * r) * (1.0 + 0.06 * std::sin(3.0 * dx / radius + phase));
      cv.at(x, y, 0) = edge * 0.62 * shade * tint;
      cv.at(x, y, 1) = edge * 0.27 * shade;
      cv.at(x, y, 2) = edge * 0.11 * shade;
    }
  }

  // Vessels: quadratic curves from an optic-disc point out to the rim.
  std::vector<double> mask(static_cast<std::size_t>(s) * s, 0.0);
  const double side = u(rng) < 0.5 ? -1.0 : 1.0;
  const double ox = c + side * 0.3 * radius, oy = c + (u(rng) - 0.5) * 0.1 * radius;
  const int vessels = 5 + static_cast<int>(u(rng) * 3);
  for (int v = 0; v < vessels; ++v) {
    const double ang = 2.0 * std::numbers::pi * (v + u(rng)) / vessels;
    const double ex = c + 0.95 * radius * std::cos(ang), ey = c + 0.95 * radius * std::sin(ang);
    const double mx = (ox + ex) / 2 + (u(rng) - 0.5) * 0.5 * radius;
    const double my = (oy + ey) / 2 + (u(rng) - 0.5) * 0.5 * radius;
    const double width = 0.6 + 0.8 * u(rng);
    const int steps = 4 * s;
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      const double px = (1 - t) * (1 - t) * ox + 2 * (1 - t) * t * mx + t * t * ex;
      const double py = (1 - t) * (1 - t) * oy + 2 * (1 - t) * t * my + t * t * ey;
      const double w = width * (1.0 - 0.5 * t);
      const int r = static_cast<int>(std::ceil(3 * w));
      for (int yy = static_cast<int>(py) - r; yy <= static_cast<int>(py) + r; ++yy) {
        for (int xx = static_cast<int>(px) - r; xx <= static_cast<int>(px) + r; ++xx) {
          if (xx < 0 || yy < 0 || xx >= s || yy >= s) continue;
          const double d2 = (xx + 0.5 - px) * (xx + 0.5 - px) + (yy + 0.5 - py) * (yy + 0.5 - py);
          double& m = mask[static_cast<std::size_t>(yy) * s + xx];
          m = std::max(m, std::exp(-d2 / (w * w)));
        }
      }
    }
  }
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const double m = mask[static_cast<std::size_t>(y) * s + x];
      cv.at(x, y, 0) *= 1.0 - 0.25 * m;
      cv.at(x, y, 1) *= 1.0 - 0.55 * m;
      cv.at(x, y, 2) *= 1.0 - 0.45 * m;
    }
  }
}

constexpr int kSuper = 4;

// Paints the blob and returns its supersampled hard-edge coverage.
double paint_blob(Canvas& cv, const LesionBlob& b) {
  const LesionStyle& st = kStyles[static_cast<std::size_t>(b.category - 1)];
  const double reach = 1.0 + st.softness;
  const int x0 = std::max(0, static_cast<int>(std::floor(b.cx - reach * b.semi_x)));
  const int x1 = std::min(cv.size() - 1, static_cast<int>(std::ceil(b.cx + reach * b.semi_x)));
  const int y0 = std::max(0, static_cast<int>(std::floor(b.cy - reach * b.semi_y)));
  const int y1 = std::min(cv.size() - 1, static_cast<int>(std::ceil(b.cy + reach * b.semi_y)));
  double covered = 0.0;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      int inside = 0;
      double soft = 0.0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = x + (sx + 0.5) / kSuper, py = y + (sy + 0.5) / kSuper;
          const double nx = (px - b.cx) / b.semi_x, ny = (py - b.cy) / b.semi_y;
          const double d = std::sqrt(nx * nx + ny * ny);
          if (d <= 1.0) ++inside;
          if (st.softness > 0.0) {
            const double t = std::clamp((reach - d) / (2.0 * st.softness), 0.0, 1.0);
            soft += t * t * (3.0 - 2.0 * t);
          }
        }
      }
      const double n = kSuper * kSuper;
      covered += inside / n;
      const double alpha = st.softness > 0.0 ? soft / n : inside / n;
      cv.blend(x, y, st.color, st.opacity * alpha);
    }
  }
  return covered;
}

bool boxes_overlap(const Box& a, const Box& b) {
  return a.x() < b.right() && b.x() < a.right() && a.y() < b.bottom() && b.y() < a.bottom();
}

}  // namespace

void SynthConfig::validate() const {
  if (image_size <= 0 || image_size % kInputDivisor != 0) {
    throw ValidationError("image_size must be a positive multiple of 32, got " +
                          std::to_string(image_size));
  }
  for (int c = 0; c < kNumCategories; ++c) {
    if (min_count[c] < 0 || max_count[c] < min_count[c]) {
      throw ValidationError("invalid lesion count range for category " + std::to_string(c + 1));
    }
    if (!(area_ratio[c] > 0.0 && area_ratio[c] < 1.0)) {
      throw ValidationError("area ratio must be in (0, 1) for category " +
                            std::to_string(c + 1));
    }
  }
  if (!(area_jitter >= 0.0 && area_jitter < 1.0)) {
    throw ValidationError("area_jitter must be in [0, 1)");
  }
  if (!(box_context_factor >= 1.0)) throw ValidationError("box_context_factor must be >= 1");
  if (!(disk_radius > 0.0 && disk_radius <= 0.5)) {
    throw ValidationError("disk_radius must be in (0, 0.5]");
  }
}

nlohmann::json to_json(const SynthConfig& cfg) {
  return {{"image_size", cfg.image_size},   {"min_count", cfg.min_count},
          {"max_count", cfg.max_count},     {"area_ratio", cfg.area_ratio},
          {"area_jitter", cfg.area_jitter}, {"box_context_factor", cfg.box_context_factor},
          {"disk_radius", cfg.disk_radius}, {"seed", cfg.seed}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.min_count = j.at("min_count").get<std::array<int, kNumCategories>>();
  c.max_count = j.at("max_count").get<std::array<int, kNumCategories>>();
  c.area_ratio = j.at("area_ratio").get<std::array<double, kNumCategories>>();
  c.area_jitter = j.at("area_jitter").get<double>();
  c.box_context_factor = j.at("box_context_factor").get<double>();
  c.disk_radius = j.at("disk_radius").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

double LesionBlob::area() const { return std::numbers::pi * semi_x * semi_y; }

std::string format_image_id(std::size_t index) {
  std::string s = std::to_string(index);
  if (s.size() < 6) s.insert(0, 6 - s.size(), '0');
  return s;
}

SceneRecord generate_scene(const SynthConfig& cfg, std::size_t index) {
  cfg.validate();
  std::mt19937_64 rng(splitmix64(cfg.seed) ^ splitmix64(index + 0x51ed270b27ULL));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int s = cfg.image_size;
  const double radius = cfg.disk_radius * s;
  const double centre = s / 2.0;

  SceneRecord rec;
  rec.image_id = format_image_id(index);
  Canvas cv(s);
  paint_fundus(cv, radius, rng);

  const double box_scale = std::sqrt(cfg.box_context_factor * std::numbers::pi / 4.0);
  std::vector<Box> boxes;
  for (int c = 1; c <= kNumCategories; ++c) {
    std::uniform_int_distribution<int> count(cfg.min_count[c - 1], cfg.max_count[c - 1]);
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
      const double jitter = 1.0 + cfg.area_jitter * (2.0 * u(rng) - 1.0);
      const double area = cfg.area_ratio[c - 1] * s * s * jitter;
      const double elong = std::exp(std::log(1.35) * (2.0 * u(rng) - 1.0));
      const double a = std::sqrt(area * elong / std::numbers::pi);
      const double b = std::sqrt(area / (elong * std::numbers::pi));
      const double w = 2.0 * a * box_scale, h = 2.0 * b * box_scale;
      bool placed = false;
      for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
        const double cx = centre + (2.0 * u(rng) - 1.0) * radius;
        const double cy = centre + (2.0 * u(rng) - 1.0) * radius;
        const Box box(cx - w / 2, cy - h / 2, w, h);
        const double fx = std::max(std::abs(box.x() - centre), std::abs(box.right() - centre));
        const double fy = std::max(std::abs(box.y() - centre), std::abs(box.bottom() - centre));
        if (fx * fx + fy * fy > radius * radius) continue;
        if (std::any_of(boxes.begin(), boxes.end(),
                        [&box](const Box& o) { return boxes_overlap(box, o); })) {
          continue;
        }
        boxes.push_back(box);
        rec.annotations.push_back({rec.image_id, box, c});
        rec.blobs.push_back({c, cx, cy, a, b, 0.0});
        placed = true;
      }
      if (!placed) {
        throw ValidationError("cannot place lesion " + std::to_string(i + 1) + " of category " +
                              std::to_string(c) + " in scene " + rec.image_id +
                              " without overlap after 100 attempts");
      }
    }
  }
  for (LesionBlob& b : rec.blobs) b.rendered_area = paint_blob(cv, b);
  rec.image = cv.quantize(rng, 0.01);
  return rec;
}

void write_annotations(std::ostream& os, std::span<const Annotation> anns) {
  for (const Annotation& a : anns) {
    const nlohmann::json j = {{"image", a.image_id}, {"x", a.box.x()}, {"y", a.box.y()},
                              {"w", a.box.w()},      {"h", a.box.h()}, {"c", a.category}};
    os << j.dump() << '\n';
  }
}

std::vector<Annotation> read_annotations(std::istream& is) {
  std::vector<Annotation> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    int c = 0;
    try {
      j = nlohmann::json::parse(line);
      c = j.at("c").get<int>();
    } catch (const std::exception& e) {
      throw ParseError("annotations line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!valid_category(c)) {
      throw ValidationError("annotations line " + std::to_string(lineno) + ": category " +
                            std::to_string(c) + " outside 1..4");
    }
    try {
      out.push_back({j.at("image").get<std::string>(),
                     Box(j.at("x").get<double>(), j.at("y").get<double>(),
                         j.at("w").get<double>(), j.at("h").get<double>()),
                     c});
    } catch (const std::exception& e) {
      throw ParseError("annotations line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::pair<std::vector<std::string>, std::vector<std::string>> split_dataset(
    std::span<const std::string> image_ids, int train_parts, int val_parts,
    std::uint64_t seed) {
  if (train_parts < 1 || val_parts < 1) {
    throw std::invalid_argument("split parts must be >= 1");
  }
  const std::size_t n = image_ids.size();
  const auto parts = static_cast<std::size_t>(train_parts) + static_cast<std::size_t>(val_parts);
  if (n < parts) {
    throw std::invalid_argument("cannot split " + std::to_string(n) + " image(s) into " +
                                std::to_string(train_parts) + ":" + std::to_string(val_parts) +
                                " parts");
  }
  std::vector<std::string> ids(image_ids.begin(), image_ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  auto n_val = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * val_parts / (train_parts + val_parts)));
  n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  std::vector<std::string> val(ids.end() - static_cast<std::ptrdiff_t>(n_val), ids.end());
  ids.resize(n - n_val);
  return {std::move(ids), std::move(val)};
}

DatasetManifest write_dataset(const std::filesystem::path& dir, const SynthConfig& cfg,
                              std::size_t count) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  DatasetManifest m;
  m.image_size = cfg.image_size;
  m.synth = cfg;
  std::ofstream ann(dir / "annotations.jsonl");
  if (!ann) throw IoError("cannot write " + (dir / "annotations.jsonl").string());
  for (std::size_t i = 0; i < count; ++i) {
    const SceneRecord rec = generate_scene(cfg, i);
    write_png(dir / (rec.image_id + ".png"), rec.image);
    write_annotations(ann, rec.annotations);
    m.image_ids.push_back(rec.image_id);
  }
  if (!ann) throw IoError("error writing " + (dir / "annotations.jsonl").string());
  const nlohmann::json j = {{"image_ids", m.image_ids},
                            {"image_size", m.image_size},
                            {"synth_config", to_json(cfg)}};
  std::ofstream out(dir / "manifest.json");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("error writing " + (dir / "manifest.json").string());
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("no dataset manifest at " + (dir / "manifest.json").string());
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    DatasetManifest m;
    m.image_ids = j.at("image_ids").get<std::vector<std::string>>();
    m.image_size = j.at("image_size").get<int>();
    m.synth = synth_config_from_json(j.at("synth_config"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError((dir / "manifest.json").string() + ": " + e.what());
  }
}

std::vector<Sample> load_samples(const std::filesystem::path& dir,
                                 std::span<const std::string> ids) {
  const DatasetManifest m = read_manifest(dir);
  std::ifstream in(dir / "annotations.jsonl");
  if (!in) throw IoError("cannot open " + (dir / "annotations.jsonl").string());
  std::map<std::string, std::vector<Annotation>> by_image;
  for (Annotation& a : read_annotations(in)) by_image[a.image_id].push_back(std::move(a));

  const std::set<std::string> known(m.image_ids.begin(), m.image_ids.end());
  std::vector<std::string> wanted(ids.begin(), ids.end());
  if (wanted.empty()) wanted = m.image_ids;
  std::vector<Sample> out;
  for (const std::string& id : wanted) {
    if (!known.count(id)) throw ValidationError("image '" + id + "' is not in the dataset");
    const RgbImage img = read_png(dir / (id + ".png"));
    if (img.width != m.image_size || img.height != m.image_size) {
      throw ValidationError("image " + id + " does not match the manifest size");
    }
    out.push_back({id, to_tensor(img), by_image[id]});
  }
  return out;
}

}  // namespace mld
