// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "kaleido/net.hpp"
#include "kaleido/rng.hpp"

namespace kaleido::testing {

inline CameraPose random_pose(Rng& rng, double t_scale = 1.0) {
  double q[4];
  for (double& v : q) v = rng.normal();
  double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  for (double& v : q) v /= n;
  double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3d R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),  //
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),   //
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return CameraPose(R, t_scale * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()));
}

// A scene with random pixels and random normalised poses. The first n_ref
// views are references; everything is visible.
template <typename T>
SceneInput<T> random_scene(const ModelConfig& cfg, int V, int res, AttrMode mode, uint64_t seed, int n_ref,
                           double t = 0.4) {
  Rng rng(Rng::mix(seed, 0x74657374ull));
  SceneInput<T> in;
  in.mode = mode;
  in.V = V;
  in.patch = cfg.patch;
  in.channels = cfg.channels;
  in.gh = res / cfg.patch;
  in.gw = res / cfg.patch;
  in.t = t;
  in.num_frames = V;
  if (mode == AttrMode::ThreeD) {
    PoseSet ps;
    for (int v = 0; v < V; ++v) ps.poses.push_back(random_pose(rng, 1.5));
    ps = normalize_translations(ps);
    in.poses = ps.poses;
  } else {
    for (int v = 0; v < V; ++v) in.frames.push_back(v);
  }
  in.split.roles.assign(V, ViewRole::Target);
  in.split.visible.assign(V, 1);
  for (int v = 0; v < n_ref; ++v) in.split.roles[v] = ViewRole::Reference;
  in.patches.resize(cfg.patch_dim(), in.num_tokens());
  for (Eigen::Index i = 0; i < in.patches.size(); ++i) in.patches.data()[i] = static_cast<T>(rng.normal() * 0.5);
  in.aux.resize(cfg.aux_dim, in.num_tokens());
  in.aux.setZero();
  return in;
}

template <typename T>
MatX<T> random_mat(Rng& rng, int rows, int cols, double scale = 1.0) {
  MatX<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.normal() * scale);
  return m;
}

}  // namespace kaleido::testing
