// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#include "kaleido/geometry.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace kaleido {

namespace {

double rotation_drift(const Eigen::Matrix3d& R) {
  return (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
}

}  // namespace

CameraPose::CameraPose(const Eigen::Matrix3d& rot, const Eigen::Vector3d& trans) : R(rot), t(trans) {
  if (!R.allFinite() || !t.allFinite()) throw std::invalid_argument("CameraPose: non-finite input");
  if (rotation_drift(R) > 1e-9) {
    if (rotation_drift(R) > 1e-2) throw std::invalid_argument("CameraPose: R is not close to a rotation");
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d U = svd.matrixU();
    if ((U * svd.matrixV().transpose()).determinant() < 0.0) U.col(2) *= -1.0;
    R = U * svd.matrixV().transpose();
  }
  if (R.determinant() < 0.0) throw std::invalid_argument("CameraPose: R is a reflection");
}

Eigen::Matrix4d CameraPose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = R;
  m.topRightCorner<3, 1>() = t;
  return m;
}

CameraPose CameraPose::from_matrix(const Eigen::Matrix4d& m) {
  return CameraPose(m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>());
}

CameraPose compose(const CameraPose& a, const CameraPose& b) {
  CameraPose out;
  out.R = a.R * b.R;
  out.t = a.R * b.t + a.t;
  return out;
}

CameraPose inverse(const CameraPose& p) {
  CameraPose out;
  out.R = p.R.transpose();
  out.t = -(p.R.transpose() * p.t);
  return out;
}

CameraPose relative(const CameraPose& a, const CameraPose& b) { return compose(inverse(a), b); }

PoseSet normalize_translations(PoseSet ps) {
  if (ps.poses.empty()) throw std::invalid_argument("normalize_translations: empty pose set");
  double max_norm = 0.0;
  for (const auto& p : ps.poses) max_norm = std::max(max_norm, p.t.norm());
  if (max_norm > 0.0) {
    double inv = 1.0 / max_norm;
    for (auto& p : ps.poses) p.t *= inv;
  }
  ps.normalized = true;
  return ps;
}

Eigen::Vector3d orbit_position(double azimuth, double elevation, double radius) {
  return radius * Eigen::Vector3d(std::cos(elevation) * std::cos(azimuth), std::sin(elevation),
                                  std::cos(elevation) * std::sin(azimuth));
}

CameraPose look_at_origin(const Eigen::Vector3d& position) {
  Eigen::Vector3d back = position.normalized();  // camera z points away from the origin
  Eigen::Vector3d up_hint(0.0, 1.0, 0.0);
  if (std::abs(back.dot(up_hint)) > 0.999) up_hint = Eigen::Vector3d(1.0, 0.0, 0.0);
  Eigen::Vector3d right = up_hint.cross(back).normalized();
  Eigen::Vector3d up = back.cross(right);
  Eigen::Matrix3d R;
  R.col(0) = right;
  R.col(1) = up;
  R.col(2) = back;
  return CameraPose(R, position);
}

PoseSet orbit_poses(int n, double radius, const std::vector<double>& elevations_rad) {
  if (n < 1) throw std::invalid_argument("orbit_poses: n must be >= 1");
  if (radius <= 0.0) throw std::invalid_argument("orbit_poses: radius must be > 0");
  PoseSet out;
  for (double elev : elevations_rad) {
    if (std::abs(elev) >= M_PI / 2.0) throw std::invalid_argument("orbit_poses: |elevation| must be < 90 deg");
    for (int i = 0; i < n; ++i) {
      double az = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n);
      out.poses.push_back(look_at_origin(orbit_position(az, elev, radius)));
    }
  }
  return out;
}

PoseSet load_pose_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open pose file: " + path);
  PoseSet out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    double v[12];
    int count = 0;
    while (count < 12 && (ss >> v[count])) ++count;
    if (count == 0) continue;  // blank or comment-only line
    double extra;
    if (count != 12 || (ss >> extra))
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 12 values per pose");
    Eigen::Matrix3d R;
    R << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
    out.poses.emplace_back(R, Eigen::Vector3d(v[9], v[10], v[11]));
  }
  return out;
}

void save_pose_file(const std::string& path, const PoseSet& ps) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.precision(17);
  for (const auto& p : ps.poses) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) f << p.R(r, c) << " ";
    f << p.t.x() << " " << p.t.y() << " " << p.t.z() << "\n";
  }
  if (!f) throw std::runtime_error("short write: " + path);
}

}  // namespace kaleido
