// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstring>

#include "kaleido/evalkit.hpp"
#include "kaleido/synth.hpp"
#include "test_helpers.hpp"

using namespace kaleido;
using kaleido::testing::random_scene;

TEST_CASE("psnr identities") {
  Image a(8, 8, 3), b(8, 8, 3);
  for (size_t i = 0; i < a.size(); ++i) a.data[i] = static_cast<float>(std::sin(0.1 * i));
  CHECK(psnr(a, a) == kPsnrCap);

  // all zeros vs all ones in [0,1]: MSE = 1 -> 0 dB.
  Image zeros(8, 8, 3), ones(8, 8, 3);
  for (auto& v : zeros.data) v = -1.0f;
  for (auto& v : ones.data) v = 1.0f;
  CHECK(psnr(zeros, ones) == doctest::Approx(0.0));

  // MSE = 0.01 -> 20 dB.
  for (size_t i = 0; i < b.size(); ++i) b.data[i] = a.data[i] + 0.2f;  // 0.1 in [0,1] space
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-6));

  Image odd(4, 8, 3);
  CHECK_THROWS_AS(psnr(a, odd), std::invalid_argument);
}

TEST_CASE("psnr decreases with noise amplitude") {
  Sample s = make_3d_sample(5, 2, 32);
  Rng rng(9);
  double last = kPsnrCap;
  for (float amp : {0.01f, 0.05f, 0.2f, 0.5f}) {
    Image noisy = s.images[0];
    Rng local(7);
    for (auto& v : noisy.data) v += amp * static_cast<float>(local.normal());
    double p = psnr(s.images[0], noisy);
    CHECK(p < last);
    last = p;
  }
}

TEST_CASE("ssim identities and closed form") {
  Sample s = make_3d_sample(6, 2, 32);
  CHECK(ssim(s.images[0], s.images[0]) == doctest::Approx(1.0));
  CHECK(ssim(s.images[0], s.images[1]) == doctest::Approx(ssim(s.images[1], s.images[0])));

  // Constant vs constant-shifted image: variances vanish, so per window
  // SSIM = (2 mu_a mu_b + C1) / (mu_a^2 + mu_b^2 + C1). The means come from
  // the float-stored pixels.
  Image a(16, 16, 3), b(16, 16, 3);
  for (auto& v : a.data) v = 0.4f * 2 - 1;
  for (auto& v : b.data) v = 0.6f * 2 - 1;
  double ca = (static_cast<double>(a.data[0]) + 1.0) * 0.5;
  double cb = (static_cast<double>(b.data[0]) + 1.0) * 0.5;
  double expect = (2.0 * ca * cb + 1e-4) / (ca * ca + cb * cb + 1e-4);
  CHECK(ssim(a, b) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("probe reports ordered quantiles without perturbing the forward") {
  ModelConfig cfg;
  cfg.layers = 3;
  cfg.hidden = 32;
  cfg.q_heads = 2;
  cfg.kv_heads = 1;
  cfg.time_sin_dim = 16;
  cfg.time_dim = 16;
  auto params = init_params<float>(cfg, 3);
  Rng wrng(4);
  for (const auto& e : params.layout->entries)
    if (e.name.find("mod") != std::string::npos)
      for (ptrdiff_t i = 0; i < e.size(); ++i) params.data[e.offset + i] = static_cast<float>(wrng.normal()) * 0.05f;

  auto in = random_scene<float>(cfg, 3, 8, AttrMode::ThreeD, 77, 1);
  ActivationStats stats = probe_activations(params, in);
  REQUIRE(static_cast<int>(stats.layers.size()) == cfg.layers);
  for (const auto& l : stats.layers) {
    CHECK(l.top1 >= l.q999);
    CHECK(l.q999 >= l.q99);
    CHECK(l.q99 >= l.q9);
    CHECK(l.q9 >= 0.0);
  }

  // Taps leave the outputs bit-identical.
  MatX<float> plain = net_forward(params, in, {});
  ProbeTaps<float> taps;
  ForwardExtras<float> extras;
  extras.taps = &taps;
  MatX<float> tapped = net_forward(params, in, extras);
  CHECK(std::memcmp(plain.data(), tapped.data(), sizeof(float) * plain.size()) == 0);

  // Reproducible bit-exactly for a fixed input.
  ActivationStats again = probe_activations(params, in);
  for (size_t i = 0; i < stats.layers.size(); ++i) {
    CHECK(stats.layers[i].top1 == again.layers[i].top1);
    CHECK(stats.layers[i].q999 == again.layers[i].q999);
  }
}

TEST_CASE("zero-gate probe equals the embed-only path statistics") {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 32;
  cfg.q_heads = 2;
  cfg.kv_heads = 1;
  cfg.time_sin_dim = 16;
  cfg.time_dim = 16;
  auto params = init_params<float>(cfg, 11);  // gates zero
  auto in = random_scene<float>(cfg, 2, 8, AttrMode::ThreeD, 5, 1);
  ActivationStats stats = probe_activations(params, in);
  // Every layer is the identity, so all layers report the embed statistics.
  for (size_t l = 1; l < stats.layers.size(); ++l) {
    CHECK(stats.layers[l].top1 == stats.layers[0].top1);
    CHECK(stats.layers[l].q9 == stats.layers[0].q9);
  }
}

TEST_CASE("throughput arithmetic and validation") {
  CHECK(throughput(100, 10.0) == doctest::Approx(10.0));
  CHECK(throughput(200, 10.0) == doctest::Approx(2.0 * throughput(100, 10.0)));
  CHECK_THROWS_AS(throughput(0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(throughput(10, 0.0), std::invalid_argument);
}

TEST_CASE("small windows are faster than large ones") {
  ModelConfig small;
  small.layers = 1;
  small.hidden = 32;
  small.q_heads = 2;
  small.kv_heads = 1;
  small.time_sin_dim = 16;
  small.time_dim = 16;
  small.window = 1;
  ModelConfig big = small;
  big.window = 7;
  auto ps = init_params<float>(small, 5);
  auto pb = init_params<float>(big, 5);
  auto in = random_scene<float>(small, 4, 16, AttrMode::ThreeD, 6, 2);
  Rng rng(8);
  MatX<float> h = kaleido::testing::random_mat<float>(rng, small.hidden, in.num_tokens());

  auto time_block = [&](const ParamStore<float>& p) {
    // Warm up, then take the best of several runs.
    attention_block(p, 0, true, in, h);
    double best = 1e30;
    for (int rep = 0; rep < 5; ++rep) {
      auto t0 = std::chrono::steady_clock::now();
      for (int i = 0; i < 20; ++i) attention_block(p, 0, true, in, h);
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
  };
  CHECK(time_block(ps) < time_block(pb));
}
