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

#include "mld/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>

#include "mld/io_error.hpp"

namespace mld {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

std::string fmt(int v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += fmt(v[i]);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  T v{};
  auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size()) {
    throw ValidationError("config key '" + key + "': cannot parse '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "on" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "off" || t == "0" || t == "no") return false;
  throw ValidationError("config key '" + key + "': expected a boolean, got '" + text + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, item));
  if (out.empty()) throw ValidationError("config key '" + key + "': empty list");
  return out;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define MLD_NUM(KEY, TYPE, MEMBER)                                                   \
  Field {                                                                            \
    KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_number<TYPE>(KEY, v); }, \
        [](const RunConfig& c) { return fmt(c.MEMBER); }                             \
  }
#define MLD_BOOL(KEY, MEMBER)                                                        \
  Field {                                                                            \
    KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_bool(KEY, v); },  \
        [](const RunConfig& c) { return fmt(c.MEMBER); }                             \
  }
#define MLD_LIST(KEY, TYPE, MEMBER)                                                  \
  Field {                                                                            \
    KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_list<TYPE>(KEY, v); }, \
        [](const RunConfig& c) { return fmt_list(c.MEMBER); }                        \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      MLD_NUM("input_size", int, detector.input_size),
      Field{"arch",
            [](RunConfig& c, const std::string& v) {
              try {
                c.detector.pyramid.mode = parse_arch(trim(v));
              } catch (const std::invalid_argument& e) {
                throw ValidationError(e.what());
              }
            },
            [](const RunConfig& c) { return to_string(c.detector.pyramid.mode); }},
      MLD_LIST("backbone.channels", int, detector.backbone.stage_channels),
      MLD_NUM("backbone.blocks", int, detector.backbone.blocks_per_stage),
      MLD_NUM("backbone.kernel", int, detector.backbone.kernel_size),
      Field{"pyramid.channels",
            [](RunConfig& c, const std::string& v) {
              c.detector.pyramid.channels = parse_number<int>("pyramid.channels", v);
              c.detector.pyramid.lift_channels = c.detector.pyramid.channels;
            },
            [](const RunConfig& c) { return fmt(c.detector.pyramid.channels); }},
      MLD_LIST("anchor.scales", double, detector.anchors.scales),
      MLD_LIST("anchor.ratios", double, detector.anchors.aspect_ratios),
      MLD_NUM("anchor.reference_side", double, detector.anchors.reference_side),
      MLD_BOOL("cf_proposal", detector.assignment.cf_enabled),
      MLD_NUM("assign.cf_iou_floor", double, detector.assignment.cf_iou_floor),
      MLD_NUM("assign.positive_iou", double, detector.assignment.positive_iou),
      MLD_NUM("assign.negative_iou", double, detector.assignment.negative_iou),
      MLD_BOOL("assign.keep_argmax_positive", detector.assignment.keep_argmax_positive),
      MLD_NUM("assign.cf_max_anchor_side", double, detector.assignment.cf_max_anchor_side),
      MLD_NUM("rpn.batch_size", int, detector.rpn.sampling.batch_size),
      MLD_NUM("rpn.positive_fraction", double, detector.rpn.sampling.positive_fraction),
      MLD_NUM("rpn.pre_nms_top_k", int, detector.rpn.pre_nms_top_k),
      MLD_NUM("rpn.post_nms_top_n", int, detector.rpn.post_nms_top_n),
      MLD_NUM("rpn.nms_threshold", double, detector.rpn.nms_threshold),
      MLD_NUM("rpn.min_size", double, detector.rpn.min_size),
      MLD_NUM("head.pool_size", int, detector.head.pool_size),
      MLD_NUM("head.sampling_ratio", int, detector.head.sampling_ratio),
      Field{"head.pool_mode",
            [](RunConfig& c, const std::string& v) {
              try {
                c.detector.head.pool_mode = parse_pool_mode(trim(v));
              } catch (const std::invalid_argument& e) {
                throw ValidationError(e.what());
              }
            },
            [](const RunConfig& c) { return to_string(c.detector.head.pool_mode); }},
      MLD_NUM("head.hidden", int, detector.head.hidden),
      MLD_NUM("head.score_threshold", double, detector.head.score_threshold),
      MLD_NUM("head.max_detections", int, detector.head.max_detections),
      MLD_NUM("head.nms_threshold", double, detector.head.nms_threshold),
      MLD_NUM("head.roi_batch_size", int, detector.head.roi_batch_size),
      MLD_NUM("head.positive_fraction", double, detector.head.positive_fraction),
      MLD_NUM("head.fg_iou", double, detector.head.fg_iou),
      MLD_BOOL("head.cf_sampling", detector.head.cf_sampling),
      MLD_NUM("train.epochs", int, train.epochs),
      MLD_NUM("train.lr", double, train.lr),
      MLD_NUM("train.momentum", double, train.momentum),
      MLD_NUM("train.weight_decay", double, train.weight_decay),
      MLD_NUM("train.lr_decay_at", double, train.lr_decay_at),
      MLD_NUM("train.lr_decay", double, train.lr_decay),
      MLD_NUM("train.batch_size", int, train.batch_size),
      MLD_NUM("train.seed", std::uint64_t, train.seed),
      MLD_BOOL("train.hflip", train.hflip),
      MLD_NUM("train.grad_clip", double, train.grad_clip),
      MLD_NUM("train.divergence_limit", double, train.divergence_limit),
      MLD_NUM("train.rpn_beta", double, train.loss.rpn_beta),
      MLD_NUM("train.head_beta", double, train.loss.head_beta),
      MLD_NUM("split.train_parts", int, split.train_parts),
      MLD_NUM("split.val_parts", int, split.val_parts),
      MLD_NUM("split.seed", std::uint64_t, split.seed),
  };
  return table;
}

#undef MLD_NUM
#undef MLD_BOOL
#undef MLD_LIST

}  // namespace

KeyValues parse_key_values(std::istream& is, const std::string& source) {
  KeyValues kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || trim(line.substr(0, eq)).empty()) {
      throw ParseError(source + " line " + std::to_string(lineno) +
                       ": expected 'key = value'");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues load_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  return parse_key_values(in, path.string());
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.push_back(f.key);
  return keys;
}

RunConfig apply_key_values(const KeyValues& kv, RunConfig base) {
  for (const auto& [key, value] : kv) {
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(),
                                 [&key](const Field& f) { return f.key == key; });
    if (it == table.end()) throw ValidationError("unknown config key '" + key + "'");
    it->set(base, value);
  }
  try {
    base.detector.validate();
    base.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ValidationError(std::string("invalid configuration: ") + e.what());
  }
  if (base.split.train_parts < 1 || base.split.val_parts < 1) {
    throw ValidationError("split parts must be >= 1");
  }
  return base;
}

KeyValues to_key_values(const RunConfig& cfg) {
  KeyValues kv;
  for (const Field& f : fields()) kv[f.key] = f.get(cfg);
  return kv;
}

void write_key_values(std::ostream& os, const KeyValues& kv) {
  for (const std::string& key : config_keys()) {
    const auto it = kv.find(key);
    if (it != kv.end()) os << key << " = " << it->second << '\n';
  }
}

nlohmann::json to_json(const KeyValues& kv) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : kv) j[k] = v;
  return j;
}

KeyValues key_values_from_json(const nlohmann::json& j) {
  KeyValues kv;
  for (const auto& [k, v] : j.items()) kv[k] = v.get<std::string>();
  return kv;
}

}  // namespace mld
