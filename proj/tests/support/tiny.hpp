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


// Small detector configurations that keep unit tests fast.

#pragma once

#include "mld/detector.hpp"

namespace tiny {

inline mld::DetectorConfig detector(mld::ArchMode mode, int size = 32) {
  mld::DetectorConfig c;
  c.input_size = size;
  c.backbone.stage_channels = {2, 2, 3, 3, 4};
  c.pyramid.mode = mode;
  c.pyramid.channels = 3;
  c.pyramid.lift_channels = 3;
  c.head.hidden = 6;
  c.head.pool_size = 2;
  c.head.roi_batch_size = 8;
  c.rpn.sampling.batch_size = 32;
  c.rpn.pre_nms_top_k = 50;
  c.rpn.post_nms_top_n = 20;
  return c;
}

}  // namespace tiny
