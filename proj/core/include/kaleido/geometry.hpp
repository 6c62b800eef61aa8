// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace kaleido {

// Rigid camera-to-world transform. The camera frame is x-right, y-up,
// z-backward, so the optical axis in world space is -R.col(2) and the camera
// centre is t. Downstream code always consumes poses through the relative
// transform inverse(a) * b.
struct CameraPose {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  CameraPose() = default;
  // Re-orthonormalises R (polar projection) when it drifts from a rotation by
  // more than 1e-9; throws if R is not close to a proper rotation at all.
  CameraPose(const Eigen::Matrix3d& rot, const Eigen::Vector3d& trans);

  Eigen::Matrix4d matrix() const;
  static CameraPose from_matrix(const Eigen::Matrix4d& m);

  Eigen::Vector3d forward() const { return -R.col(2); }
};

CameraPose compose(const CameraPose& a, const CameraPose& b);
CameraPose inverse(const CameraPose& p);
// inverse(a) * b, the transform feeding the positional encoding.
CameraPose relative(const CameraPose& a, const CameraPose& b);

struct PoseSet {
  std::vector<CameraPose> poses;
  bool normalized = false;

  size_t size() const { return poses.size(); }
};

// Scales every translation by 1 / max_i ||t_i|| so the largest camera
// distance is exactly 1; rotations are untouched. An all-zero set is returned
// unchanged with the flag set. Idempotent.
PoseSet normalize_translations(PoseSet ps);

// n cameras per elevation ring on a sphere of the given radius, looking at
// the origin, azimuths uniform over [0, 360).
PoseSet orbit_poses(int n, double radius, const std::vector<double>& elevations_rad);

// Camera position for (azimuth, elevation, radius) in the y-up world frame,
// and the corresponding look-at-origin pose.
Eigen::Vector3d orbit_position(double azimuth, double elevation, double radius);
CameraPose look_at_origin(const Eigen::Vector3d& position);

// Text pose files: one pose per line as 12 decimals (row-major R then t),
// '#' starts a comment.
PoseSet load_pose_file(const std::string& path);
void save_pose_file(const std::string& path, const PoseSet& ps);

}  // namespace kaleido
