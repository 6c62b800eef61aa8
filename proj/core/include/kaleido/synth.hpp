// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "kaleido/encoding.hpp"
#include "kaleido/geometry.hpp"
#include "kaleido/image.hpp"
#include "kaleido/rng.hpp"

namespace kaleido {

// Procedural scenes: up to a few lambertian spheres and axis-aligned boxes
// inside the unit ball over a solid background, lit by one directional light.
// Everything is a pure function of the seed, so any view can be re-rendered
// bit-exactly, which is what the PSNR oracles in the eval pipeline rely on.
struct Primitive {
  enum class Kind { Sphere, Box } kind = Kind::Sphere;
  Eigen::Vector3f center = Eigen::Vector3f::Zero();
  Eigen::Vector3f half_size = Eigen::Vector3f::Zero();  // x = radius for spheres
  Eigen::Vector3f albedo = Eigen::Vector3f::Ones();
};

struct SceneSpec {
  uint64_t seed = 0;
  std::vector<Primitive> primitives;
  Eigen::Vector3f background = Eigen::Vector3f::Zero();
  Eigen::Vector3f light_dir = Eigen::Vector3f(0, 1, 0);  // unit, surface -> light
};

SceneSpec make_scene(uint64_t seed);

// Pinhole raycast with a 45 degree vertical field of view; lambertian shading
// albedo * (ambient + (1 - ambient) * max(0, n.l)). Output in [-1, 1].
Image render(const SceneSpec& scene, const CameraPose& pose, int res);

// One training/eval sample: V views of one scene.
struct Sample {
  AttrMode mode = AttrMode::ThreeD;
  uint64_t seed = 0;
  std::vector<Image> images;
  PoseSet poses;            // 3D mode, normalised
  std::vector<int> frames;  // video mode
};

// V views at random azimuth/elevation on a fixed-radius sphere, poses
// normalised over the whole sample.
Sample make_3d_sample(uint64_t seed, int num_views, int res);

// A smooth camera sweep; frames carry temporal indices 0..V-1 and the poses
// are not exposed to the model.
Sample make_video_sample(uint64_t seed, int num_views, int res);

// Dataset cache: one "sample_%06d.ksmp" file per sample (header, poses or
// frame indices, raw float32 pixel payload). Round-trips bit-exactly.
void save_sample(const std::string& path, const Sample& s);
Sample load_sample(const std::string& path);
std::string sample_filename(int index);

}  // namespace kaleido
