// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "kaleido/image.hpp"
#include "kaleido/net.hpp"

namespace kaleido {

// PSNR in dB over images in [-1, 1] (mapped to [0, 1] internally); identical
// images report the kPsnrCap sentinel instead of infinity.
inline constexpr double kPsnrCap = 100.0;
double psnr(const Image& a, const Image& b);

// Mean SSIM over non-overlapping 8x8 windows per channel, constants
// C1 = 0.01^2, C2 = 0.03^2 on the [0, 1] range, population variances.
double ssim(const Image& a, const Image& b);

// Activation-magnitude probe: per transformer layer, the largest hidden-state
// magnitude and the top 0.001% / 0.01% / 0.1% nearest-rank quantiles of the
// absolute values. Taps read post-residual, pre-norm states and do not
// perturb the forward pass.
struct ActivationStats {
  struct Layer {
    double top1 = 0, q999 = 0, q99 = 0, q9 = 0;
  };
  std::vector<Layer> layers;
};

template <typename T>
ActivationStats probe_activations(const ParamStore<T>& params, const SceneInput<T>& in);

void write_probe_csv(const std::string& path, const ActivationStats& stats);

// Wall-clock throughput over a warm window.
double throughput(long long samples, double seconds);

}  // namespace kaleido
