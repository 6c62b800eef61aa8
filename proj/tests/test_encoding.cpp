// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "kaleido/encoding.hpp"
#include "kaleido/rng.hpp"

using namespace kaleido;
using Matd = Eigen::MatrixXd;

namespace {

CameraPose random_pose(Rng& rng, double t_scale = 1.0) {
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

GeomAttr random_attr(Rng& rng, AttrMode mode) {
  GeomAttr a;
  a.mode = mode;
  a.theta_h = rng.uniform() * 2.0 * M_PI;
  a.theta_w = rng.uniform() * 2.0 * M_PI;
  if (mode == AttrMode::ThreeD)
    a.pose = random_pose(rng, 0.7);
  else
    a.theta_t = rng.uniform() * 2.0 * M_PI;
  return a;
}

}  // namespace

TEST_CASE("attr_3d maps grid indices uniformly") {
  CameraPose p;
  GeomAttr tl = attr_3d(0, 0, 16, 16, p);
  CHECK(tl.theta_h == 0.0);
  CHECK(tl.theta_w == 0.0);

  GeomAttr mid = attr_3d(8, 4, 16, 16, p);
  CHECK(mid.theta_h == doctest::Approx(M_PI));
  CHECK(mid.theta_w == doctest::Approx(M_PI / 2));

  GeomAttr row = attr_3d(0, 3, 1, 8, p);
  CHECK(row.theta_h == 0.0);

  CHECK_THROWS_AS(attr_3d(16, 0, 16, 16, p), std::out_of_range);
}

TEST_CASE("attr_video maps frame indices linearly") {
  CHECK(attr_video(0, 0, 4, 4, 0, 8).theta_t == 0.0);
  CHECK(attr_video(0, 0, 4, 4, 4, 8).theta_t == doctest::Approx(M_PI));
  CHECK(attr_video(0, 0, 4, 4, 7, 8).theta_t == doctest::Approx(7.0 * M_PI / 4.0));
  CHECK(attr_video(0, 0, 4, 4, 0, 1).theta_t == 0.0);
  CHECK_THROWS_AS(attr_video(0, 0, 4, 4, 8, 8), std::out_of_range);
}

TEST_CASE("frequency ladder endpoints and rounding") {
  auto f = freq_ladder(8, 16.0);
  CHECK(f.front() == 1.0);
  CHECK(f.back() == 16.0);
  for (double w : f) CHECK(w == std::round(w));
  CHECK(freq_ladder(1, 16.0) == std::vector<double>{1.0});
}

TEST_CASE("layout band allocation follows the 1:1 and 1:1:2 splits") {
  RepLayout s = RepLayout::spatial(32, 16, 16);
  CHECK(s.freq_h.size() == 8);
  CHECK(s.freq_w.size() == 8);
  CHECK(s.pose_repeats == 0);

  RepLayout t3 = RepLayout::temporal(32, 16, 16, AttrMode::ThreeD, 12);
  CHECK(t3.freq_h.size() == 4);
  CHECK(t3.freq_w.size() == 4);
  CHECK(t3.pose_repeats == 4);  // 4 blocks * 4 dims = d/2

  RepLayout tv = RepLayout::temporal(32, 16, 16, AttrMode::Video, 12);
  CHECK(tv.freq_t.size() == 8);
  CHECK(tv.pose_repeats == 0);

  CHECK_THROWS_AS(RepLayout::spatial(30, 8, 8), std::invalid_argument);
  CHECK_THROWS_AS(RepLayout::temporal(28, 8, 8, AttrMode::ThreeD, 4), std::invalid_argument);
}

TEST_CASE("rep_matrix at the identity attribute is the identity matrix") {
  for (AttrMode mode : {AttrMode::ThreeD, AttrMode::Video}) {
    RepLayout layout = RepLayout::temporal(16, 8, 8, mode, 6);
    RepMatrix<double> rep = rep_matrix<double>(identity_attr(mode), layout);
    Matd dense = rep_dense(rep, RepOp::Forward);
    CHECK((dense - Matd::Identity(16, 16)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("half-turn band is a negation block") {
  // One band with frequency 1: theta_h = pi rotates by pi.
  RepLayout layout;
  layout.kind = RepKind::Spatial;
  layout.head_dim = 4;
  layout.freq_h = {1.0};
  layout.freq_w = {1.0};
  GeomAttr a;
  a.theta_h = M_PI;
  RepMatrix<double> rep = rep_matrix<double>(a, layout);
  Matd dense = rep_dense(rep, RepOp::Forward);
  Matd expect = Matd::Identity(4, 4);
  expect(0, 0) = -1;
  expect(1, 1) = -1;
  CHECK((dense - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("rep_matrix is a homomorphism") {
  Rng rng(31);
  for (AttrMode mode : {AttrMode::ThreeD, AttrMode::Video}) {
    RepLayout layout = RepLayout::temporal(32, 8, 8, mode, 10);
    for (int i = 0; i < 20; ++i) {
      GeomAttr a = random_attr(rng, mode), b = random_attr(rng, mode);
      Matd lhs = rep_dense(rep_matrix<double>(compose(a, b), layout), RepOp::Forward);
      Matd rhs = rep_dense(rep_matrix<double>(a, layout), RepOp::Forward) *
                 rep_dense(rep_matrix<double>(b, layout), RepOp::Forward);
      CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("rep ops agree with dense linear algebra") {
  Rng rng(5);
  RepLayout layout = RepLayout::temporal(24, 8, 8, AttrMode::ThreeD, 4);
  GeomAttr a = random_attr(rng, AttrMode::ThreeD);
  RepMatrix<double> rep = rep_matrix<double>(a, layout);
  Matd fwd = rep_dense(rep, RepOp::Forward);
  CHECK((rep_dense(rep, RepOp::Inverse) - fwd.inverse()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((rep_dense(rep, RepOp::Transpose) - fwd.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((rep_dense(rep, RepOp::InverseTranspose) - fwd.inverse().transpose()).cwiseAbs().maxCoeff() < 1e-9);

  // Blockwise application equals the dense product.
  Eigen::VectorXd x(24), y(24);
  for (int i = 0; i < 24; ++i) x[i] = rng.normal();
  rep_apply(rep, RepOp::Forward, x.data(), y.data());
  CHECK((y - fwd * x).cwiseAbs().maxCoeff() < 1e-12);

  // SE(3) blocks keep the homogeneous bottom row.
  CHECK(rep.M(3, 0) == 0.0);
  CHECK(rep.M(3, 3) == 1.0);
}

namespace {

// Brute-force GTA attention for a single head: scores, softmax, value path
// and output transform all through dense rho matrices.
Matd oracle_attention(const Matd& q, const Matd& k, const Matd& v, const std::vector<GeomAttr>& attrs,
                      const RepLayout& layout, Matd* scores_out = nullptr) {
  const int n = static_cast<int>(attrs.size());
  const int d = layout.head_dim;
  std::vector<Matd> rho(n);
  for (int i = 0; i < n; ++i) rho[i] = rep_dense(rep_matrix<double>(attrs[i], layout), RepOp::Forward);
  Matd scores(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      Matd rel = rho[i].inverse() * rho[j];
      scores(i, j) = q.col(i).dot(rel * k.col(j)) / std::sqrt(static_cast<double>(d));
    }
  if (scores_out) *scores_out = scores;
  Matd out(d, n);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd e = (scores.row(i).array() - scores.row(i).maxCoeff()).exp();
    e /= e.sum();
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(d);
    for (int j = 0; j < n; ++j) acc += e[j] * (rho[i].inverse() * rho[j] * v.col(j));
    out.col(i) = acc;
  }
  return out;
}

}  // namespace

TEST_CASE("gta_apply with identical attributes reduces to plain attention") {
  Rng rng(8);
  const int d = 16, n = 6;
  RepLayout layout = RepLayout::temporal(d, 4, 4, AttrMode::ThreeD, 4);
  GeomAttr shared = random_attr(rng, AttrMode::ThreeD);
  std::vector<GeomAttr> attrs(n, shared);
  Matd q(d, n), k(d, n), v(d, n);
  for (int i = 0; i < d * n; ++i) {
    q.data()[i] = rng.normal();
    k.data()[i] = rng.normal();
    v.data()[i] = rng.normal();
  }
  auto tx = gta_apply<double>(q, k, v, attrs, layout);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      CHECK(tx.q.col(i).dot(tx.k.col(j)) == doctest::Approx(q.col(i).dot(k.col(j))).epsilon(1e-9));
}

TEST_CASE("two-token pure-2D case matches the rotary relative form") {
  Rng rng(9);
  const int d = 4;
  RepLayout layout;
  layout.kind = RepKind::Spatial;
  layout.head_dim = d;
  layout.freq_h = {1.0};
  layout.freq_w = {1.0};
  GeomAttr a, b;
  a.theta_h = 0.7;
  a.theta_w = 2.1;
  b.theta_h = 1.9;
  b.theta_w = 0.4;
  Matd q(d, 2), k(d, 2), v = Matd::Zero(d, 2);
  for (int i = 0; i < d * 2; ++i) {
    q.data()[i] = rng.normal();
    k.data()[i] = rng.normal();
  }
  auto tx = gta_apply<double>(q, k, v, {a, b}, layout);
  double score = tx.q.col(0).dot(tx.k.col(1));

  // Classic relative rotary: q^T Rot(theta_b - theta_a) k, per 2D block.
  auto rot2 = [](double t) {
    Eigen::Matrix2d r;
    r << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
    return r;
  };
  double expect = q.col(0).head(2).dot(rot2(b.theta_h - a.theta_h) * k.col(1).head(2)) +
                  q.col(0).tail(2).dot(rot2(b.theta_w - a.theta_w) * k.col(1).tail(2));
  CHECK(score == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("global left-composition leaves scores and outputs unchanged") {
  Rng rng(77);
  const int d = 32, n = 8;
  for (AttrMode mode : {AttrMode::ThreeD, AttrMode::Video}) {
    RepLayout layout = RepLayout::temporal(d, 8, 8, mode, 6);
    for (int rep = 0; rep < 10; ++rep) {
      std::vector<GeomAttr> attrs;
      for (int i = 0; i < n; ++i) attrs.push_back(random_attr(rng, mode));
      GeomAttr h = random_attr(rng, mode);
      std::vector<GeomAttr> shifted;
      for (const auto& a : attrs) shifted.push_back(compose(h, a));

      Matd q(d, n), k(d, n), v(d, n);
      for (int i = 0; i < d * n; ++i) {
        q.data()[i] = rng.normal();
        k.data()[i] = rng.normal();
        v.data()[i] = rng.normal();
      }
      Matd s0, s1;
      Matd out0 = oracle_attention(q, k, v, attrs, layout, &s0);
      Matd out1 = oracle_attention(q, k, v, shifted, layout, &s1);
      CHECK((s0 - s1).cwiseAbs().maxCoeff() < 1e-6);
      CHECK((out0 - out1).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("gta_apply realises the relative-score identity") {
  Rng rng(13);
  const int d = 16, n = 5;
  RepLayout layout = RepLayout::temporal(d, 4, 4, AttrMode::ThreeD, 4);
  std::vector<GeomAttr> attrs;
  for (int i = 0; i < n; ++i) attrs.push_back(random_attr(rng, AttrMode::ThreeD));
  Matd q(d, n), k(d, n), v(d, n);
  for (int i = 0; i < d * n; ++i) {
    q.data()[i] = rng.normal();
    k.data()[i] = rng.normal();
    v.data()[i] = rng.normal();
  }
  auto tx = gta_apply<double>(q, k, v, attrs, layout);
  for (int i = 0; i < n; ++i) {
    Matd rho_i = rep_dense(rep_matrix<double>(attrs[i], layout), RepOp::Forward);
    for (int j = 0; j < n; ++j) {
      Matd rho_j = rep_dense(rep_matrix<double>(attrs[j], layout), RepOp::Forward);
      double expect = q.col(i).dot(rho_i.inverse() * rho_j * k.col(j));
      CHECK(tx.q.col(i).dot(tx.k.col(j)) == doctest::Approx(expect).epsilon(1e-9));
    }
  }

  // Value path: rho(g_i)^-1 sum_j alpha_ij rho(g_j) v_j via the helpers.
  Matd probs = Matd::Constant(n, n, 1.0 / n);
  Matd mixed = tx.v * probs.transpose();
  gta_output_transform<double>(mixed, attrs, layout);
  for (int i = 0; i < n; ++i) {
    Matd rho_i = rep_dense(rep_matrix<double>(attrs[i], layout), RepOp::Forward);
    Eigen::VectorXd expect = Eigen::VectorXd::Zero(d);
    for (int j = 0; j < n; ++j) {
      Matd rho_j = rep_dense(rep_matrix<double>(attrs[j], layout), RepOp::Forward);
      expect += probs(i, j) * (rho_i.inverse() * rho_j * v.col(j));
    }
    CHECK((mixed.col(i) - expect).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("spatial-layout scores depend only on angle deltas") {
  Rng rng(15);
  const int d = 16;
  RepLayout layout = RepLayout::temporal(d, 8, 8, AttrMode::ThreeD, 4);
  CameraPose shared_pose = random_pose(rng);
  auto make = [&](double th, double tw) {
    GeomAttr a;
    a.theta_h = th;
    a.theta_w = tw;
    a.pose = shared_pose;
    return a;
  };
  Eigen::VectorXd q(d), k(d);
  for (int i = 0; i < d; ++i) {
    q[i] = rng.normal();
    k[i] = rng.normal();
  }
  // Equal deltas, different absolute angles.
  auto score = [&](const GeomAttr& a, const GeomAttr& b) {
    Matd qm(d, 2), km(d, 2), vm = Matd::Zero(d, 2);
    qm.col(0) = q;
    qm.col(1) = q;
    km.col(0) = k;
    km.col(1) = k;
    auto tx = gta_apply<double>(qm, km, vm, {a, b}, layout);
    return tx.q.col(0).dot(tx.k.col(1));
  };
  double s1 = score(make(0.3, 1.0), make(0.9, 1.5));
  double s2 = score(make(1.7, 2.2), make(2.3, 2.7));
  CHECK(s1 == doctest::Approx(s2).epsilon(1e-9));
}

TEST_CASE("layout/mode mismatches are rejected") {
  RepLayout layout = RepLayout::temporal(16, 4, 4, AttrMode::ThreeD, 4);
  GeomAttr video = identity_attr(AttrMode::Video);
  CHECK_THROWS_AS(rep_matrix<double>(video, layout), std::invalid_argument);

  RepLayout spatial = RepLayout::spatial(16, 4, 4);
  CHECK_NOTHROW(rep_matrix<double>(video, spatial));  // spatial accepts both modes
}
