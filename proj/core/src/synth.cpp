// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#include "kaleido/synth.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace kaleido {

namespace {

constexpr float kAmbient = 0.25f;
constexpr double kFovY = 45.0 * M_PI / 180.0;
constexpr double kCameraRadius = 2.6;

struct Hit {
  float t = std::numeric_limits<float>::infinity();
  Eigen::Vector3f normal = Eigen::Vector3f::Zero();
  const Primitive* prim = nullptr;
};

bool intersect_sphere(const Primitive& p, const Eigen::Vector3f& o, const Eigen::Vector3f& d, Hit& hit) {
  Eigen::Vector3f oc = o - p.center;
  float r = p.half_size.x();
  float b = oc.dot(d);
  float c = oc.squaredNorm() - r * r;
  float disc = b * b - c;
  if (disc < 0.0f) return false;
  float sq = std::sqrt(disc);
  float t = -b - sq;
  if (t < 1e-4f) t = -b + sq;
  if (t < 1e-4f || t >= hit.t) return false;
  hit.t = t;
  hit.normal = (o + t * d - p.center).normalized();
  hit.prim = &p;
  return true;
}

bool intersect_box(const Primitive& p, const Eigen::Vector3f& o, const Eigen::Vector3f& d, Hit& hit) {
  // Slab test against the axis-aligned box [center - hs, center + hs].
  float t_near = -std::numeric_limits<float>::infinity();
  float t_far = std::numeric_limits<float>::infinity();
  int near_axis = -1;
  for (int a = 0; a < 3; ++a) {
    float lo = p.center[a] - p.half_size[a], hi = p.center[a] + p.half_size[a];
    if (std::abs(d[a]) < 1e-9f) {
      if (o[a] < lo || o[a] > hi) return false;
      continue;
    }
    float t0 = (lo - o[a]) / d[a], t1 = (hi - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_near) {
      t_near = t0;
      near_axis = a;
    }
    t_far = std::min(t_far, t1);
    if (t_near > t_far) return false;
  }
  float t = t_near >= 1e-4f ? t_near : t_far;
  if (t < 1e-4f || t >= hit.t || near_axis < 0) return false;
  hit.t = t;
  Eigen::Vector3f n = Eigen::Vector3f::Zero();
  Eigen::Vector3f q = o + t * d;
  n[near_axis] = q[near_axis] > p.center[near_axis] ? 1.0f : -1.0f;
  hit.normal = n;
  hit.prim = &p;
  return true;
}

}  // namespace

SceneSpec make_scene(uint64_t seed) {
  Rng rng(Rng::mix(seed, 0x7363656e65ull));
  SceneSpec s;
  s.seed = seed;
  int n = rng.uniform_int(1, 4);
  for (int i = 0; i < n; ++i) {
    Primitive p;
    p.kind = rng.uniform() < 0.5 ? Primitive::Kind::Sphere : Primitive::Kind::Box;
    for (int a = 0; a < 3; ++a) p.center[a] = static_cast<float>((rng.uniform() * 2.0 - 1.0) * 0.55);
    float max_size = 0.95f * (1.0f - p.center.norm());
    if (p.kind == Primitive::Kind::Sphere) {
      float r = static_cast<float>(0.15 + rng.uniform() * 0.25);
      p.half_size.setConstant(std::min(r, max_size));
    } else {
      for (int a = 0; a < 3; ++a)
        p.half_size[a] = std::min(static_cast<float>(0.12 + rng.uniform() * 0.23), max_size);
    }
    for (int a = 0; a < 3; ++a) p.albedo[a] = static_cast<float>(0.15 + rng.uniform() * 0.85);
    s.primitives.push_back(p);
  }
  for (int a = 0; a < 3; ++a) s.background[a] = static_cast<float>(0.05 + rng.uniform() * 0.5);
  double az = rng.uniform() * 2.0 * M_PI;
  double el = 0.3 + rng.uniform() * 1.0;  // upper hemisphere
  s.light_dir = Eigen::Vector3f(static_cast<float>(std::cos(el) * std::cos(az)), static_cast<float>(std::sin(el)),
                                static_cast<float>(std::cos(el) * std::sin(az)));
  return s;
}

Image render(const SceneSpec& scene, const CameraPose& pose, int res) {
  Image img(res, res, 3);
  const float fl = static_cast<float>(res / 2.0 / std::tan(kFovY / 2.0));
  const float cx = res / 2.0f - 0.5f, cy = res / 2.0f - 0.5f;
  const Eigen::Matrix3f R = pose.R.cast<float>();
  const Eigen::Vector3f origin = pose.t.cast<float>();
#pragma omp parallel for schedule(static)
  for (int y = 0; y < res; ++y) {
    for (int x = 0; x < res; ++x) {
      // Camera frame is x-right, y-up, z-backward; rays leave along -z.
      Eigen::Vector3f dir_cam((static_cast<float>(x) - cx) / fl, -(static_cast<float>(y) - cy) / fl, -1.0f);
      Eigen::Vector3f d = (R * dir_cam).normalized();
      Hit hit;
      for (const auto& p : scene.primitives) {
        if (p.kind == Primitive::Kind::Sphere)
          intersect_sphere(p, origin, d, hit);
        else
          intersect_box(p, origin, d, hit);
      }
      Eigen::Vector3f rgb;
      if (hit.prim) {
        float diff = std::max(0.0f, hit.normal.dot(scene.light_dir));
        rgb = hit.prim->albedo * (kAmbient + (1.0f - kAmbient) * diff);
      } else {
        rgb = scene.background;
      }
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = rgb[ch] * 2.0f - 1.0f;
    }
  }
  return img;
}

Sample make_3d_sample(uint64_t seed, int num_views, int res) {
  if (num_views < 2) throw std::invalid_argument("make_3d_sample: need at least 2 views");
  SceneSpec scene = make_scene(seed);
  Rng rng(Rng::mix(seed, 0x706f736573ull));
  Sample s;
  s.mode = AttrMode::ThreeD;
  s.seed = seed;
  for (int v = 0; v < num_views; ++v) {
    double az = rng.uniform() * 2.0 * M_PI;
    double el = -M_PI / 6.0 + rng.uniform() * (M_PI / 4.0 + M_PI / 6.0);  // [-30, 45] deg
    CameraPose pose = look_at_origin(orbit_position(az, el, kCameraRadius));
    s.poses.poses.push_back(pose);
    s.images.push_back(render(scene, pose, res));
  }
  s.poses = normalize_translations(s.poses);
  return s;
}

Sample make_video_sample(uint64_t seed, int num_views, int res) {
  if (num_views < 2) throw std::invalid_argument("make_video_sample: need at least 2 views");
  SceneSpec scene = make_scene(seed);
  Rng rng(Rng::mix(seed, 0x766964656full));
  Sample s;
  s.mode = AttrMode::Video;
  s.seed = seed;
  double az0 = rng.uniform() * 2.0 * M_PI;
  double span = (0.5 + rng.uniform() * 0.75) * M_PI;  // 90..225 degree sweep
  double el0 = rng.uniform() * 0.6;
  double el_wobble = 0.15 + rng.uniform() * 0.2;
  for (int f = 0; f < num_views; ++f) {
    double a = static_cast<double>(f) / (num_views - 1);
    double az = az0 + span * a;
    double el = el0 + el_wobble * std::sin(a * M_PI);
    CameraPose pose = look_at_origin(orbit_position(az, el, kCameraRadius));
    s.images.push_back(render(scene, pose, res));
    s.frames.push_back(f);
  }
  return s;
}

namespace {
constexpr char kSampleMagic[4] = {'K', 'S', 'M', 'P'};
}

void save_sample(const std::string& path, const Sample& s) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(kSampleMagic, 4);
  uint32_t version = 1, mode = s.mode == AttrMode::Video ? 1 : 0;
  uint32_t V = static_cast<uint32_t>(s.images.size());
  uint32_t h = s.images.empty() ? 0 : static_cast<uint32_t>(s.images[0].h);
  uint32_t w = s.images.empty() ? 0 : static_cast<uint32_t>(s.images[0].w);
  f.write(reinterpret_cast<const char*>(&version), 4);
  f.write(reinterpret_cast<const char*>(&mode), 4);
  f.write(reinterpret_cast<const char*>(&V), 4);
  f.write(reinterpret_cast<const char*>(&h), 4);
  f.write(reinterpret_cast<const char*>(&w), 4);
  f.write(reinterpret_cast<const char*>(&s.seed), 8);
  if (s.mode == AttrMode::ThreeD) {
    for (const auto& p : s.poses.poses) {
      double buf[12];
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) buf[r * 3 + c] = p.R(r, c);
      for (int a = 0; a < 3; ++a) buf[9 + a] = p.t[a];
      f.write(reinterpret_cast<const char*>(buf), sizeof(buf));
    }
  } else {
    for (int fr : s.frames) {
      int32_t v = fr;
      f.write(reinterpret_cast<const char*>(&v), 4);
    }
  }
  for (const auto& img : s.images)
    f.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.size() * sizeof(float)));
  if (!f) throw std::runtime_error("short write: " + path);
}

Sample load_sample(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kSampleMagic, 4) != 0) throw std::runtime_error("not a sample file: " + path);
  uint32_t version, mode, V, h, w;
  f.read(reinterpret_cast<char*>(&version), 4);
  f.read(reinterpret_cast<char*>(&mode), 4);
  f.read(reinterpret_cast<char*>(&V), 4);
  f.read(reinterpret_cast<char*>(&h), 4);
  f.read(reinterpret_cast<char*>(&w), 4);
  if (version != 1) throw std::runtime_error("sample version mismatch: " + path);
  Sample s;
  s.mode = mode == 1 ? AttrMode::Video : AttrMode::ThreeD;
  f.read(reinterpret_cast<char*>(&s.seed), 8);
  if (s.mode == AttrMode::ThreeD) {
    s.poses.normalized = true;
    for (uint32_t v = 0; v < V; ++v) {
      double buf[12];
      f.read(reinterpret_cast<char*>(buf), sizeof(buf));
      Eigen::Matrix3d R;
      R << buf[0], buf[1], buf[2], buf[3], buf[4], buf[5], buf[6], buf[7], buf[8];
      s.poses.poses.emplace_back(R, Eigen::Vector3d(buf[9], buf[10], buf[11]));
    }
  } else {
    for (uint32_t v = 0; v < V; ++v) {
      int32_t fr;
      f.read(reinterpret_cast<char*>(&fr), 4);
      s.frames.push_back(fr);
    }
  }
  for (uint32_t v = 0; v < V; ++v) {
    Image img(static_cast<int>(h), static_cast<int>(w), 3);
    f.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.size() * sizeof(float)));
    s.images.push_back(std::move(img));
  }
  if (!f) throw std::runtime_error("truncated sample: " + path);
  return s;
}

std::string sample_filename(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%06d.ksmp", index);
  return buf;
}

}  // namespace kaleido
