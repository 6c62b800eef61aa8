// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kaleido/geometry.hpp"
#include "kaleido/rng.hpp"
#include "kaleido/tokens.hpp"

namespace kaleido {

// Training-time timestep distribution: a base family pushed toward the noise
// end (t = 1) by the shift sigma via modulate().
enum class SamplerFamily { Uniform, LogitNormal, Mode };

struct SamplerSpec {
  SamplerFamily family = SamplerFamily::Mode;
  double shift = 3.0;       // sigma >= 1
  double mode_scale = 0.8;  // s in [0, 1], Mode family only

  void validate() const;
};

SamplerSpec parse_sampler(const std::string& name);  // "uniform" | "logitnormal" | "mode"

// m(t, sigma) = sigma * t / (1 + (sigma - 1) * t); fixes 0 and 1, strictly
// increasing, pushes mass toward t = 1 for sigma > 1.
double modulate(double t, double sigma);
double modulate_inverse(double t_prime, double sigma);

// Draw from the base family, then apply the shift.
double sample_t(const SamplerSpec& spec, Rng& rng);

// Base-family helpers (pre-shift), exposed for the density/CDF oracles.
double mode_base_map(double u, double scale);      // u in [0,1] -> t
double sampler_density(const SamplerSpec& spec, double t);  // analytic pdf after shift
double sampler_cdf(const SamplerSpec& spec, double t);      // analytic cdf after shift

// Inference timestep grid t_0 > t_1 > ... > t_n = 0.
enum class ScheduleKind { Linspace, Trailing, LinearQuadratic };

struct Schedule {
  ScheduleKind kind = ScheduleKind::LinearQuadratic;
  std::vector<double> t;  // n + 1 grid points
  int steps() const { return static_cast<int>(t.size()) - 1; }
};

ScheduleKind parse_schedule(const std::string& name);  // "linspace" | "trailing" | "linquad"

// Linspace: uniform from t_max to 0. Trailing: uniform over the inner index
// range [0.001, 0.98] (scaled by t_max/0.999) with a final step to 0.
// LinearQuadratic: ceil(n/2) constant steps of 1e-3 below t_max, then
// quadratically spaced points down to 0, so the grid is dense at the noise
// end and sparse near the data end.
Schedule build_schedule(ScheduleKind kind, int steps, double t_max = 0.999);

// --- rectified flow primitives -------------------------------------------

template <typename T>
MatX<T> interpolate(const MatX<T>& z, const MatX<T>& eps, double t);

template <typename T>
MatX<T> velocity_target(const MatX<T>& z, const MatX<T>& eps);

// Mean squared error between predicted and target velocity over the tokens
// selected by token_mask (visible targets); reference tokens never touch the
// loss value or its gradient.
template <typename T>
T flow_loss(const MatX<T>& pred_velocity, const MatX<T>& velocity_target, const std::vector<uint8_t>& token_mask);

template <typename T>
MatX<T> flow_loss_grad(const MatX<T>& pred_velocity, const MatX<T>& velocity_target,
                       const std::vector<uint8_t>& token_mask);

// --- sampling --------------------------------------------------------------

struct GenerateOptions {
  Schedule schedule;
  double cfg_scale = 1.5;
  uint64_t seed = 0;
  // 0 = all targets at once; g > 0 generates targets in groups of g, feeding
  // finished groups back as references.
  int autoregressive_group = 0;
  // Optional pre-drawn noise, one image per target view (overrides seed).
  const std::vector<Image>* noise = nullptr;
  int img_h = 0, img_w = 0;  // required when there are no reference views
};

// Euler integration of the learned velocity field from t_0 down to 0,
// starting targets at pure noise. cfg_scale != 1 blends the conditional
// prediction with an unconditional pass (all reference views masked):
// v = v_uncond + cfg_scale * (v_cond - v_uncond). Poses are normalised over
// all views present in the call. Outputs are clamped to [-1, 1] at the end.
template <typename T>
std::vector<Image> generate(const VelocityFn<T>& velocity, int patch, int channels,
                            const std::vector<Image>& ref_images, const PoseSet& ref_poses,
                            const PoseSet& target_poses, const GenerateOptions& opts);

}  // namespace kaleido
