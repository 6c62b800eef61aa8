// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "kaleido/geometry.hpp"
#include "kaleido/rng.hpp"

using namespace kaleido;

namespace {

CameraPose random_pose(Rng& rng) {
  // Random rotation via normalised quaternion.
  double q[4];
  for (double& v : q) v = rng.normal();
  double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  for (double& v : q) v /= n;
  double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3d R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),  //
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),   //
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  Eigen::Vector3d t(rng.normal(), rng.normal(), rng.normal());
  return CameraPose(R, t);
}

CameraPose rot_z(double angle, const Eigen::Vector3d& t = Eigen::Vector3d::Zero()) {
  Eigen::Matrix3d R;
  R << std::cos(angle), -std::sin(angle), 0, std::sin(angle), std::cos(angle), 0, 0, 0, 1;
  return CameraPose(R, t);
}

}  // namespace

TEST_CASE("compose identity and inverse") {
  Rng rng(7);
  CameraPose p = random_pose(rng);
  CameraPose id;

  CameraPose ip = compose(id, p);
  CHECK((ip.R - p.R).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((ip.t - p.t).cwiseAbs().maxCoeff() < 1e-12);

  CameraPose pi = compose(p, inverse(p));
  CHECK((pi.matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() < 1e-9);

  CameraPose pp = inverse(inverse(p));
  CHECK((pp.matrix() - p.matrix()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("compose matches the homogeneous matrix product") {
  CameraPose a = rot_z(M_PI / 2), b = rot_z(M_PI / 2);
  CameraPose ab = compose(a, b);
  CHECK((ab.matrix() - rot_z(M_PI).matrix()).cwiseAbs().maxCoeff() < 1e-12);

  Rng rng(12);
  for (int i = 0; i < 50; ++i) {
    CameraPose p = random_pose(rng), q = random_pose(rng);
    Eigen::Matrix4d oracle = p.matrix() * q.matrix();
    CHECK((compose(p, q).matrix() - oracle).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("closed-form inverse of a pure translation") {
  CameraPose p(Eigen::Matrix3d::Identity(), Eigen::Vector3d(1, 2, 3));
  CameraPose inv = inverse(p);
  CHECK((inv.R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((inv.t - Eigen::Vector3d(-1, -2, -3)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("group laws on random poses") {
  Rng rng(99);
  for (int i = 0; i < 30; ++i) {
    CameraPose a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
    Eigen::Matrix4d lhs = compose(compose(a, b), c).matrix();
    Eigen::Matrix4d rhs = compose(a, compose(b, c)).matrix();
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("construction orthonormalises drifted rotations") {
  Rng rng(5);
  CameraPose p = random_pose(rng);
  Eigen::Matrix3d drifted = p.R;
  drifted(0, 1) += 3e-5;  // beyond the tolerance
  CameraPose fixed(drifted, p.t);
  CHECK((fixed.R.transpose() * fixed.R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(fixed.R.determinant() == doctest::Approx(1.0).epsilon(1e-9));

  Eigen::Matrix3d garbage = Eigen::Matrix3d::Zero();
  CHECK_THROWS_AS(CameraPose(garbage, p.t), std::invalid_argument);
}

TEST_CASE("normalize_translations scales by the max norm") {
  PoseSet ps;
  ps.poses.emplace_back(Eigen::Matrix3d::Identity(), Eigen::Vector3d(0, 0, 2));
  ps.poses.emplace_back(Eigen::Matrix3d::Identity(), Eigen::Vector3d(0, 0, 1));
  PoseSet out = normalize_translations(ps);
  CHECK(out.normalized);
  CHECK(out.poses[0].t.z() == doctest::Approx(1.0));
  CHECK(out.poses[1].t.z() == doctest::Approx(0.5));
}

TEST_CASE("normalize_translations leaves all-zero sets unchanged") {
  PoseSet ps;
  ps.poses.emplace_back(Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero());
  PoseSet out = normalize_translations(ps);
  CHECK(out.normalized);
  CHECK(out.poses[0].t.norm() == 0.0);
}

TEST_CASE("normalize_translations random oracle and idempotence") {
  Rng rng(3);
  PoseSet ps;
  for (int i = 0; i < 8; ++i) ps.poses.push_back(random_pose(rng));
  PoseSet out = normalize_translations(ps);
  double max_norm = 0.0;
  for (const auto& p : out.poses) max_norm = std::max(max_norm, p.t.norm());
  CHECK(max_norm == doctest::Approx(1.0).epsilon(1e-9));
  for (size_t i = 0; i < ps.poses.size(); ++i)
    CHECK((out.poses[i].R - ps.poses[i].R).cwiseAbs().maxCoeff() == 0.0);

  PoseSet again = normalize_translations(out);
  for (size_t i = 0; i < out.poses.size(); ++i)
    CHECK((again.poses[i].t - out.poses[i].t).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("orbit_poses construction") {
  PoseSet four = orbit_poses(4, 2.0, {0.0});
  REQUIRE(four.size() == 4);
  for (const auto& p : four.poses) CHECK(p.t.norm() == doctest::Approx(2.0));
  // Azimuths 0/90/180/270: positions on the equator.
  CHECK(four.poses[0].t.x() == doctest::Approx(2.0));
  CHECK(four.poses[1].t.z() == doctest::Approx(2.0));
  CHECK(four.poses[2].t.x() == doctest::Approx(-2.0));

  PoseSet rig = orbit_poses(12, 1.5, {-M_PI / 6, 0.0, M_PI / 6});
  CHECK(rig.size() == 36);

  CHECK_THROWS_AS(orbit_poses(0, 1.0, {0.0}), std::invalid_argument);
}

TEST_CASE("orbit poses look at the origin") {
  PoseSet ps = orbit_poses(7, 3.0, {0.3, -0.2});
  for (const auto& p : ps.poses) {
    // Optical axis convention: camera z is backward, so R*e_z*radius == t.
    Eigen::Vector3d residual = p.R * Eigen::Vector3d(0, 0, 1) * 3.0 - p.t;
    CHECK(residual.norm() < 1e-6);
    CHECK((p.R.transpose() * p.R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(p.R.determinant() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("pose file round trip") {
  Rng rng(21);
  PoseSet ps;
  for (int i = 0; i < 5; ++i) ps.poses.push_back(random_pose(rng));
  auto path = std::filesystem::temp_directory_path() / "kaleido_poses_test.txt";
  save_pose_file(path.string(), ps);
  PoseSet back = load_pose_file(path.string());
  REQUIRE(back.size() == ps.size());
  for (size_t i = 0; i < ps.size(); ++i) {
    CHECK((back.poses[i].R - ps.poses[i].R).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((back.poses[i].t - ps.poses[i].t).cwiseAbs().maxCoeff() < 1e-12);
  }
  std::filesystem::remove(path);
}

TEST_CASE("pose file rejects malformed lines") {
  auto path = std::filesystem::temp_directory_path() / "kaleido_poses_bad.txt";
  {
    std::ofstream f(path);
    f << "# comment line\n1 0 0 0 1 0 0 0 1 0 0\n";  // 11 values
  }
  CHECK_THROWS(load_pose_file(path.string()));
  std::filesystem::remove(path);
}
