// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <vector>

#include "kaleido/geometry.hpp"

namespace kaleido {

enum class AttrMode { ThreeD, Video };

// Per-token geometric attribute: two in-plane angles plus either a camera
// pose (3D mode) or a temporal angle (video mode). Angles live in [0, 2pi).
struct GeomAttr {
  double theta_h = 0.0;
  double theta_w = 0.0;
  AttrMode mode = AttrMode::ThreeD;
  CameraPose pose;       // 3D payload
  double theta_t = 0.0;  // video payload
};

GeomAttr attr_3d(int h_idx, int w_idx, int grid_h, int grid_w, const CameraPose& pose);
GeomAttr attr_video(int h_idx, int w_idx, int grid_h, int grid_w, int frame_idx, int num_frames);

GeomAttr identity_attr(AttrMode mode);
// Group composition: angles add mod 2pi, poses compose. Used by the
// homomorphism and invariance tests.
GeomAttr compose(const GeomAttr& a, const GeomAttr& b);

enum class RepKind { Spatial, TemporalOr3D };

// Frequency-band allocation for one attention flavour at a given per-head
// dimension d. Spatial blocks split d 1:1 between the h and w angles (d/4
// two-dimensional rotation bands each). Temporal/3D blocks use a 1:1:2 split:
// d/8 bands each for h and w, and the remaining d/2 dims hold either d/4
// temporal bands (video) or the 4x4 pose transform repeated d/8 times (3D).
struct RepLayout {
  RepKind kind = RepKind::Spatial;
  AttrMode mode = AttrMode::ThreeD;  // meaningful for TemporalOr3D only
  int head_dim = 0;
  std::vector<double> freq_h, freq_w, freq_t;
  int pose_repeats = 0;

  static RepLayout spatial(int head_dim, int grid_h, int grid_w);
  static RepLayout temporal(int head_dim, int grid_h, int grid_w, AttrMode mode, int num_frames);

  int angle_bands() const { return static_cast<int>(freq_h.size() + freq_w.size() + freq_t.size()); }
};

// Geometric ladder of per-band frequencies: w_b = round(F^(b/(B-1))),
// b = 0..B-1, so band 0 completes one cycle across the extent F.
std::vector<double> freq_ladder(int bands, double max_freq);

// Which matrix of the representation acts on the vector.
enum class RepOp {
  Forward,           // rho(g)
  Inverse,           // rho(g)^-1
  Transpose,         // rho(g)^T
  InverseTranspose,  // rho(g)^-T
};

constexpr RepOp rep_op_transpose(RepOp op) {
  switch (op) {
    case RepOp::Forward: return RepOp::Transpose;
    case RepOp::Transpose: return RepOp::Forward;
    case RepOp::Inverse: return RepOp::InverseTranspose;
    case RepOp::InverseTranspose: return RepOp::Inverse;
  }
  return RepOp::Forward;
}

// Block-diagonal representation rho(g) of one attribute under one layout,
// stored as its blocks: cos/sin per 2x2 rotation band, then the 4x4 pose
// matrix (and its inverse) when the layout carries pose blocks.
template <typename T>
struct RepMatrix {
  int head_dim = 0;
  int pose_repeats = 0;
  std::vector<T> c, s;
  Eigen::Matrix<T, 4, 4> M = Eigen::Matrix<T, 4, 4>::Identity();
  Eigen::Matrix<T, 4, 4> Minv = Eigen::Matrix<T, 4, 4>::Identity();
};

template <typename T>
RepMatrix<T> rep_matrix(const GeomAttr& attr, const RepLayout& layout);

// y = op(rho) * x over one head vector of length head_dim; x == y is allowed.
template <typename T>
inline void rep_apply(const RepMatrix<T>& rep, RepOp op, const T* x, T* y) {
  const bool positive_angle = (op == RepOp::Forward || op == RepOp::InverseTranspose);
  const int nb = static_cast<int>(rep.c.size());
  for (int b = 0; b < nb; ++b) {
    T c = rep.c[b];
    T s = positive_angle ? rep.s[b] : -rep.s[b];
    T x0 = x[2 * b], x1 = x[2 * b + 1];
    y[2 * b] = c * x0 - s * x1;
    y[2 * b + 1] = s * x0 + c * x1;
  }
  if (rep.pose_repeats > 0) {
    Eigen::Matrix<T, 4, 4> A;
    switch (op) {
      case RepOp::Forward: A = rep.M; break;
      case RepOp::Inverse: A = rep.Minv; break;
      case RepOp::Transpose: A = rep.M.transpose(); break;
      case RepOp::InverseTranspose: A = rep.Minv.transpose(); break;
    }
    int base = 2 * nb;
    for (int r = 0; r < rep.pose_repeats; ++r) {
      Eigen::Matrix<T, 4, 1> v(x[base], x[base + 1], x[base + 2], x[base + 3]);
      Eigen::Matrix<T, 4, 1> o = A * v;
      y[base] = o[0];
      y[base + 1] = o[1];
      y[base + 2] = o[2];
      y[base + 3] = o[3];
      base += 4;
    }
  }
}

// Dense d x d form of op(rho), for oracle-style tests.
template <typename T>
Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> rep_dense(const RepMatrix<T>& rep, RepOp op);

// Contract-level transform of per-token query/key/value columns:
//   q~_i = rho(g_i)^-T q_i,  k~_j = rho(g_j) k_j,  v~_j = rho(g_j) v_j,
// which realises score(i,j) = q_i^T rho(g_i^-1 o g_j) k_j as q~_i . k~_j.
// After attention, outputs are pulled back with gta_output_transform
// (out_i <- rho(g_i)^-1 out_i). When value_transform is false only q/k are
// transformed (the relative-score-only baseline).
template <typename T>
struct GtaTransformed {
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> q, k, v;
};

template <typename T>
GtaTransformed<T> gta_apply(const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& q,
                            const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& k,
                            const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& v,
                            const std::vector<GeomAttr>& attrs, const RepLayout& layout,
                            bool value_transform = true);

template <typename T>
void gta_output_transform(Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& out,
                          const std::vector<GeomAttr>& attrs, const RepLayout& layout);

}  // namespace kaleido
