// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#include "kaleido/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace kaleido {

double psnr(const Image& a, const Image& b) {
  if (a.h != b.h || a.w != b.w || a.c != b.c) throw std::invalid_argument("psnr: shape mismatch");
  double mse = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double da = (static_cast<double>(a.data[i]) + 1.0) * 0.5;
    double db = (static_cast<double>(b.data[i]) + 1.0) * 0.5;
    mse += (da - db) * (da - db);
  }
  mse /= static_cast<double>(a.size());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) {
  if (a.h != b.h || a.w != b.w || a.c != b.c) throw std::invalid_argument("ssim: shape mismatch");
  constexpr int kWin = 8;
  constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;
  if (a.h < kWin || a.w < kWin) throw std::invalid_argument("ssim: image smaller than the 8x8 window");
  double acc = 0.0;
  long long windows = 0;
  for (int ch = 0; ch < a.c; ++ch)
    for (int y0 = 0; y0 + kWin <= a.h; y0 += kWin)
      for (int x0 = 0; x0 + kWin <= a.w; x0 += kWin) {
        double ma = 0, mb = 0;
        for (int y = y0; y < y0 + kWin; ++y)
          for (int x = x0; x < x0 + kWin; ++x) {
            ma += (a.at(y, x, ch) + 1.0) * 0.5;
            mb += (b.at(y, x, ch) + 1.0) * 0.5;
          }
        const double n = kWin * kWin;
        ma /= n;
        mb /= n;
        double va = 0, vb = 0, cov = 0;
        for (int y = y0; y < y0 + kWin; ++y)
          for (int x = x0; x < x0 + kWin; ++x) {
            double da = (a.at(y, x, ch) + 1.0) * 0.5 - ma;
            double db = (b.at(y, x, ch) + 1.0) * 0.5 - mb;
            va += da * da;
            vb += db * db;
            cov += da * db;
          }
        va /= n;
        vb /= n;
        cov /= n;
        acc += ((2 * ma * mb + kC1) * (2 * cov + kC2)) / ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
        ++windows;
      }
  return acc / static_cast<double>(windows);
}

namespace {

// Nearest-rank "top p%" quantile of |values|: the k-th largest with
// k = max(1, ceil(n * p / 100)).
template <typename T>
double top_percent(std::vector<T>& mags, double p) {
  const size_t n = mags.size();
  size_t k = static_cast<size_t>(std::ceil(static_cast<double>(n) * p / 100.0));
  k = std::clamp<size_t>(k, 1, n);
  std::nth_element(mags.begin(), mags.begin() + (k - 1), mags.end(), std::greater<T>());
  return static_cast<double>(mags[k - 1]);
}

}  // namespace

template <typename T>
ActivationStats probe_activations(const ParamStore<T>& params, const SceneInput<T>& in) {
  ProbeTaps<T> taps;
  ForwardExtras<T> extras;
  extras.taps = &taps;
  net_forward(params, in, extras);
  ActivationStats stats;
  for (const auto& x : taps.layer_output) {
    std::vector<T> mags(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) mags[static_cast<size_t>(i)] = std::abs(x.data()[i]);
    ActivationStats::Layer l;
    l.top1 = static_cast<double>(*std::max_element(mags.begin(), mags.end()));
    l.q999 = top_percent(mags, 0.001);
    l.q99 = top_percent(mags, 0.01);
    l.q9 = top_percent(mags, 0.1);
    stats.layers.push_back(l);
  }
  return stats;
}

void write_probe_csv(const std::string& path, const ActivationStats& stats) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "layer,top1,q999,q99,q9\n";
  for (size_t i = 0; i < stats.layers.size(); ++i) {
    const auto& l = stats.layers[i];
    f << i << "," << l.top1 << "," << l.q999 << "," << l.q99 << "," << l.q9 << "\n";
  }
}

double throughput(long long samples, double seconds) {
  if (samples <= 0 || seconds <= 0.0) throw std::invalid_argument("throughput: empty measurement window");
  return static_cast<double>(samples) / seconds;
}

template ActivationStats probe_activations<float>(const ParamStore<float>&, const SceneInput<float>&);
template ActivationStats probe_activations<double>(const ParamStore<double>&, const SceneInput<double>&);

}  // namespace kaleido
