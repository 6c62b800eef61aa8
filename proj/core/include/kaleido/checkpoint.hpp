// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kaleido/net.hpp"

namespace kaleido {

// Flat binary checkpoint: "KLDC" magic, format version, the ModelConfig
// fields, the training step, then one named blob per parameter tensor with
// shape metadata and little-endian float32 payload. Optimiser moments ride
// along as "opt.adam.m" / "opt.adam.v" blobs when present.
struct Checkpoint {
  ModelConfig config;
  uint64_t step = 0;
  ParamStore<float> params;
  bool has_opt = false;
  uint64_t adam_t = 0;
  std::vector<float> adam_m, adam_v;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace kaleido
