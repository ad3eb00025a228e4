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

// Checkpoint file layout (all integers little-endian):
//
//   "MLDCKPT1"
//   u32 manifest_bytes, manifest JSON
//   u32 tensor_count
//   per tensor: u32 name_bytes, name, u32 rank, u32 dims[rank],
//               float32 values[prod(dims)]
//   u32 crc32 of everything after the magic

#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "mld/detector.hpp"

namespace mld {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct CheckpointData {
  nlohmann::json manifest;
  std::vector<NamedTensor> tensors;
};

/// Serialises every parameter of `model`. The manifest stores `manifest`
/// as given; callers put the run configuration snapshot under "config".
std::string encode_checkpoint(const Detector& model, const nlohmann::json& manifest);
CheckpointData decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Detector& model,
                     const nlohmann::json& manifest);
CheckpointData load_checkpoint(const std::filesystem::path& path);

/// Copies tensors into the model. Throws ValidationError when names,
/// order or shapes differ from the model's parameter list.
void restore_parameters(Detector& model, const std::vector<NamedTensor>& tensors);

/// Git-style blob hash: sha1("blob <size>\0" + content), lowercase hex.
std::string git_blob_hash(const std::string& content);
std::string file_blob_hash(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);

}  // namespace mld
