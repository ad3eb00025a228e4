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

// Flat key=value run configuration.
//
//   # comment
//   arch = lfpn
//   anchor.scales = 0.02,0.05,0.1,0.2,0.5,1,2
//
// Later assignments win, so layering file values over defaults and then
// command-line overrides over the file gives CLI > file > default.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "mld/detector.hpp"
#include "mld/training.hpp"

namespace mld {

struct SplitConfig {
  int train_parts = 4;
  int val_parts = 1;
  std::uint64_t seed = 0;
};

struct RunConfig {
  DetectorConfig detector;
  TrainConfig train;
  SplitConfig split;
};

using KeyValues = std::map<std::string, std::string>;

/// Parses `key = value` lines. Throws ParseError with the line number on a
/// line without '=' or with an empty key.
KeyValues parse_key_values(std::istream& is, const std::string& source = "config");
KeyValues load_key_values(const std::filesystem::path& path);

/// Every recognised key, in a stable documentation order.
std::vector<std::string> config_keys();

/// Applies `kv` on top of `base`. Throws ValidationError on an unknown key
/// or a malformed value, then validates the result.
RunConfig apply_key_values(const KeyValues& kv, RunConfig base = {});

/// Full snapshot; apply_key_values(to_key_values(c)) reproduces c exactly.
KeyValues to_key_values(const RunConfig& cfg);
void write_key_values(std::ostream& os, const KeyValues& kv);

nlohmann::json to_json(const KeyValues& kv);
KeyValues key_values_from_json(const nlohmann::json& j);

}  // namespace mld
