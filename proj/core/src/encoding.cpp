// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#include "kaleido/encoding.hpp"

#include <cmath>

namespace kaleido {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;

double wrap_angle(double a) {
  a = std::fmod(a, kTwoPi);
  if (a < 0.0) a += kTwoPi;
  return a;
}
}  // namespace

GeomAttr attr_3d(int h_idx, int w_idx, int grid_h, int grid_w, const CameraPose& pose) {
  if (h_idx < 0 || h_idx >= grid_h || w_idx < 0 || w_idx >= grid_w)
    throw std::out_of_range("attr_3d: grid index out of range");
  GeomAttr a;
  a.theta_h = kTwoPi * static_cast<double>(h_idx) / static_cast<double>(grid_h);
  a.theta_w = kTwoPi * static_cast<double>(w_idx) / static_cast<double>(grid_w);
  a.mode = AttrMode::ThreeD;
  a.pose = pose;
  return a;
}

GeomAttr attr_video(int h_idx, int w_idx, int grid_h, int grid_w, int frame_idx, int num_frames) {
  if (h_idx < 0 || h_idx >= grid_h || w_idx < 0 || w_idx >= grid_w)
    throw std::out_of_range("attr_video: grid index out of range");
  if (frame_idx < 0 || frame_idx >= num_frames) throw std::out_of_range("attr_video: frame index out of range");
  GeomAttr a;
  a.theta_h = kTwoPi * static_cast<double>(h_idx) / static_cast<double>(grid_h);
  a.theta_w = kTwoPi * static_cast<double>(w_idx) / static_cast<double>(grid_w);
  a.mode = AttrMode::Video;
  a.theta_t = num_frames <= 1 ? 0.0 : kTwoPi * static_cast<double>(frame_idx) / static_cast<double>(num_frames);
  return a;
}

GeomAttr identity_attr(AttrMode mode) {
  GeomAttr a;
  a.mode = mode;
  return a;
}

GeomAttr compose(const GeomAttr& a, const GeomAttr& b) {
  if (a.mode != b.mode) throw std::invalid_argument("compose: attribute modes differ");
  GeomAttr out;
  out.mode = a.mode;
  out.theta_h = wrap_angle(a.theta_h + b.theta_h);
  out.theta_w = wrap_angle(a.theta_w + b.theta_w);
  if (a.mode == AttrMode::ThreeD)
    out.pose = kaleido::compose(a.pose, b.pose);
  else
    out.theta_t = wrap_angle(a.theta_t + b.theta_t);
  return out;
}

std::vector<double> freq_ladder(int bands, double max_freq) {
  if (bands < 1) throw std::invalid_argument("freq_ladder: bands must be >= 1");
  std::vector<double> out(bands, 1.0);
  if (bands == 1 || max_freq <= 1.0) return out;
  for (int b = 0; b < bands; ++b) {
    double w = std::pow(max_freq, static_cast<double>(b) / static_cast<double>(bands - 1));
    out[b] = std::max(1.0, std::round(w));
  }
  return out;
}

RepLayout RepLayout::spatial(int head_dim, int grid_h, int grid_w) {
  if (head_dim % 4 != 0) throw std::invalid_argument("RepLayout::spatial: head_dim must be divisible by 4");
  RepLayout l;
  l.kind = RepKind::Spatial;
  l.head_dim = head_dim;
  double f = static_cast<double>(std::max(grid_h, grid_w));
  l.freq_h = freq_ladder(head_dim / 4, f);
  l.freq_w = freq_ladder(head_dim / 4, f);
  return l;
}

RepLayout RepLayout::temporal(int head_dim, int grid_h, int grid_w, AttrMode mode, int num_frames) {
  if (head_dim % 8 != 0) throw std::invalid_argument("RepLayout::temporal: head_dim must be divisible by 8");
  RepLayout l;
  l.kind = RepKind::TemporalOr3D;
  l.mode = mode;
  l.head_dim = head_dim;
  double f = static_cast<double>(std::max(grid_h, grid_w));
  l.freq_h = freq_ladder(head_dim / 8, f);
  l.freq_w = freq_ladder(head_dim / 8, f);
  if (mode == AttrMode::Video) {
    l.freq_t = freq_ladder(head_dim / 4, static_cast<double>(std::max(num_frames, 1)));
  } else {
    l.pose_repeats = head_dim / 8;
  }
  return l;
}

template <typename T>
RepMatrix<T> rep_matrix(const GeomAttr& attr, const RepLayout& layout) {
  if (layout.kind == RepKind::TemporalOr3D && layout.mode != attr.mode)
    throw std::invalid_argument("rep_matrix: layout mode does not match attribute mode");
  RepMatrix<T> rep;
  rep.head_dim = layout.head_dim;
  rep.pose_repeats = layout.pose_repeats;
  rep.c.reserve(layout.angle_bands());
  rep.s.reserve(layout.angle_bands());
  auto push_bands = [&](const std::vector<double>& freqs, double theta) {
    for (double w : freqs) {
      double a = w * theta;
      rep.c.push_back(static_cast<T>(std::cos(a)));
      rep.s.push_back(static_cast<T>(std::sin(a)));
    }
  };
  push_bands(layout.freq_h, attr.theta_h);
  push_bands(layout.freq_w, attr.theta_w);
  if (!layout.freq_t.empty()) push_bands(layout.freq_t, attr.theta_t);
  if (layout.pose_repeats > 0) {
    rep.M = attr.pose.matrix().cast<T>();
    rep.Minv = inverse(attr.pose).matrix().cast<T>();
  }
  return rep;
}

template <typename T>
Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> rep_dense(const RepMatrix<T>& rep, RepOp op) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  Mat out = Mat::Zero(rep.head_dim, rep.head_dim);
  std::vector<T> basis(rep.head_dim, T(0)), col(rep.head_dim);
  for (int j = 0; j < rep.head_dim; ++j) {
    basis[j] = T(1);
    rep_apply(rep, op, basis.data(), col.data());
    for (int i = 0; i < rep.head_dim; ++i) out(i, j) = col[i];
    basis[j] = T(0);
  }
  return out;
}

template <typename T>
GtaTransformed<T> gta_apply(const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& q,
                            const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& k,
                            const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& v,
                            const std::vector<GeomAttr>& attrs, const RepLayout& layout, bool value_transform) {
  const int n = static_cast<int>(attrs.size());
  if (q.rows() != layout.head_dim || k.rows() != layout.head_dim || v.rows() != layout.head_dim)
    throw std::invalid_argument("gta_apply: vector dimension does not match layout head_dim");
  if (q.cols() != n || k.cols() != n || v.cols() != n)
    throw std::invalid_argument("gta_apply: one column per attribute expected");
  GtaTransformed<T> out{q, k, v};
  for (int i = 0; i < n; ++i) {
    RepMatrix<T> rep = rep_matrix<T>(attrs[i], layout);
    rep_apply(rep, RepOp::InverseTranspose, q.col(i).data(), out.q.col(i).data());
    rep_apply(rep, RepOp::Forward, k.col(i).data(), out.k.col(i).data());
    if (value_transform) rep_apply(rep, RepOp::Forward, v.col(i).data(), out.v.col(i).data());
  }
  return out;
}

template <typename T>
void gta_output_transform(Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& out,
                          const std::vector<GeomAttr>& attrs, const RepLayout& layout) {
  if (out.rows() != layout.head_dim || out.cols() != static_cast<Eigen::Index>(attrs.size()))
    throw std::invalid_argument("gta_output_transform: shape mismatch");
  for (int i = 0; i < out.cols(); ++i) {
    RepMatrix<T> rep = rep_matrix<T>(attrs[i], layout);
    rep_apply(rep, RepOp::Inverse, out.col(i).data(), out.col(i).data());
  }
}

template RepMatrix<float> rep_matrix<float>(const GeomAttr&, const RepLayout&);
template RepMatrix<double> rep_matrix<double>(const GeomAttr&, const RepLayout&);
template Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic> rep_dense<float>(const RepMatrix<float>&, RepOp);
template Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic> rep_dense<double>(const RepMatrix<double>&, RepOp);
template GtaTransformed<float> gta_apply<float>(const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic>&,
                                                const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic>&,
                                                const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic>&,
                                                const std::vector<GeomAttr>&, const RepLayout&, bool);
template GtaTransformed<double> gta_apply<double>(const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>&,
                                                  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>&,
                                                  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>&,
                                                  const std::vector<GeomAttr>&, const RepLayout&, bool);
template void gta_output_transform<float>(Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic>&,
                                          const std::vector<GeomAttr>&, const RepLayout&);
template void gta_output_transform<double>(Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>&,
                                           const std::vector<GeomAttr>&, const RepLayout&);

}  // namespace kaleido
