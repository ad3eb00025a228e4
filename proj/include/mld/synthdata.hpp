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

// Synthetic fundus-like scenes with four lesion categories:
//   1 blot hemorrhage   mid-size dark-red blob
//   2 micro-aneurysm    tiny dark-red dot
//   3 hard exudate      bright yellow, sharp edge
//   4 cotton wool spot  pale, fuzzy edge

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "mld/geometry.hpp"
#include "mld/image_io.hpp"
#include "mld/training.hpp"

namespace mld {

struct SynthConfig {
  int image_size = 128;
  std::array<int, kNumCategories> min_count{1, 1, 1, 1};
  std::array<int, kNumCategories> max_count{8, 8, 8, 8};
  // Mean lesion-blob area as a fraction of the image area.
  std::array<double, kNumCategories> area_ratio{0.0007244, 0.0005390, 0.0031672, 0.0023976};
  double area_jitter = 0.2;         // blob area scaled by U(1 - j, 1 + j)
  double box_context_factor = 2.0;  // box area / blob area
  double disk_radius = 0.48;        // fraction of image_size
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::json& j);

/// Axis-aligned elliptical lesion with semi-axes (semi_x, semi_y).
struct LesionBlob {
  int category;
  double cx, cy;
  double semi_x, semi_y;
  double rendered_area;  // supersampled pixel coverage of the ellipse

  double area() const;
};

struct SceneRecord {
  std::string image_id;
  RgbImage image;
  std::vector<Annotation> annotations;
  std::vector<LesionBlob> blobs;  // parallel to annotations
};

/// Zero-padded six-digit id.
std::string format_image_id(std::size_t index);

/// Pure function of (cfg, index). Throws ValidationError when a blob cannot
/// be placed without overlap after 100 attempts.
SceneRecord generate_scene(const SynthConfig& cfg, std::size_t index);

/// JSON lines: {"image": id, "x", "y", "w", "h", "c"}.
void write_annotations(std::ostream& os, std::span<const Annotation> anns);
/// Throws ParseError (with line number) on malformed lines and
/// ValidationError on a category outside 1..4.
std::vector<Annotation> read_annotations(std::istream& is);

/// Shuffled split by image id with |train| : |val| as close to
/// train_parts : val_parts as possible and both sides non-empty. Throws
/// std::invalid_argument with fewer images than train_parts + val_parts.
std::pair<std::vector<std::string>, std::vector<std::string>> split_dataset(
    std::span<const std::string> image_ids, int train_parts, int val_parts,
    std::uint64_t seed);

struct DatasetManifest {
  std::vector<std::string> image_ids;
  int image_size = 0;
  SynthConfig synth;
};

/// Writes <id>.png, annotations.jsonl and manifest.json for `count` scenes.
DatasetManifest write_dataset(const std::filesystem::path& dir, const SynthConfig& cfg,
                              std::size_t count);
DatasetManifest read_manifest(const std::filesystem::path& dir);

/// Loads images and annotations for the given ids (all when empty).
std::vector<Sample> load_samples(const std::filesystem::path& dir,
                                 std::span<const std::string> ids = {});

}  // namespace mld
