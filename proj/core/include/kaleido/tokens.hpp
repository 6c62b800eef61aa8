// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <functional>
#include <stdexcept>
#include <vector>

#include "kaleido/encoding.hpp"
#include "kaleido/image.hpp"
#include "kaleido/views.hpp"

namespace kaleido {

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// One scene as the network consumes it: V views flattened to tokens in view
// order, each view a gh x gw grid of p x p patches. Target-view patches are
// expected to carry the noised pixels already; reference views stay clean.
// Token n belongs to view n / (gh*gw) at location n % (gh*gw).
template <typename T>
struct SceneInput {
  AttrMode mode = AttrMode::ThreeD;
  int V = 0, gh = 0, gw = 0, patch = 1, channels = 3;
  int num_frames = 0;            // video mode
  MatX<T> patches;               // (p*p*C) x N
  MatX<T> aux;                   // A x N auxiliary features, zero rows when unused
  ViewSplit split;
  std::vector<CameraPose> poses;  // 3D mode, normalised by the caller
  std::vector<int> frames;        // video mode
  double t = 0.0;

  int tokens_per_view() const { return gh * gw; }
  int num_tokens() const { return V * gh * gw; }
  int view_of(int token) const { return token / tokens_per_view(); }
  int loc_of(int token) const { return token % tokens_per_view(); }
};

// Rearranges a stack of images into patch columns; exact inverse of
// unpatchify. Patch rows are ordered (dy, dx, channel).
template <typename T>
MatX<T> patchify(const std::vector<Image>& views, int p) {
  if (views.empty()) throw std::invalid_argument("patchify: no views");
  const int h = views[0].h, w = views[0].w, c = views[0].c;
  if (h % p != 0 || w % p != 0) throw std::invalid_argument("patchify: resolution not divisible by patch size");
  const int gh = h / p, gw = w / p, P = p * p * c;
  MatX<T> out(P, static_cast<Eigen::Index>(views.size()) * gh * gw);
  for (size_t v = 0; v < views.size(); ++v) {
    if (views[v].h != h || views[v].w != w || views[v].c != c)
      throw std::invalid_argument("patchify: views must share a resolution");
    for (int i = 0; i < gh; ++i)
      for (int j = 0; j < gw; ++j) {
        Eigen::Index col = static_cast<Eigen::Index>(v) * gh * gw + i * gw + j;
        int row = 0;
        for (int dy = 0; dy < p; ++dy)
          for (int dx = 0; dx < p; ++dx)
            for (int ch = 0; ch < c; ++ch) out(row++, col) = static_cast<T>(views[v].at(i * p + dy, j * p + dx, ch));
      }
  }
  return out;
}

// Reconstructs one view from its token columns [first, first + gh*gw).
template <typename T>
Image unpatchify_view(const MatX<T>& tokens, Eigen::Index first, int gh, int gw, int p, int c) {
  Image img(gh * p, gw * p, c);
  for (int i = 0; i < gh; ++i)
    for (int j = 0; j < gw; ++j) {
      Eigen::Index col = first + i * gw + j;
      int row = 0;
      for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx < p; ++dx)
          for (int ch = 0; ch < c; ++ch) img.at(i * p + dy, j * p + dx, ch) = static_cast<float>(tokens(row++, col));
    }
  return img;
}

// Geometric attribute of one token.
template <typename T>
GeomAttr token_attr(const SceneInput<T>& in, int token) {
  int v = in.view_of(token), loc = in.loc_of(token);
  int i = loc / in.gw, j = loc % in.gw;
  if (in.mode == AttrMode::ThreeD) return attr_3d(i, j, in.gh, in.gw, in.poses[v]);
  return attr_video(i, j, in.gh, in.gw, in.frames[v], in.num_frames);
}

// 1 for tokens that belong to a visible target view (the loss support).
template <typename T>
std::vector<uint8_t> target_token_mask(const SceneInput<T>& in) {
  std::vector<uint8_t> mask(in.num_tokens(), 0);
  for (int n = 0; n < in.num_tokens(); ++n) {
    int v = in.view_of(n);
    mask[n] = in.split.roles[v] == ViewRole::Target && in.split.visible[v];
  }
  return mask;
}

// Per-scene velocity model: maps a (possibly partially noised) scene to the
// predicted velocity for every token. The trained network is one such model;
// tests plug in closed-form oracles.
template <typename T>
using VelocityFn = std::function<MatX<T>(const SceneInput<T>&)>;

}  // namespace kaleido
