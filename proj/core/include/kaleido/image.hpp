// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace kaleido {

// Dense float image, row-major (y, x, channel). Values live in model space
// [-1, 1] throughout the library; writers map to [0, 1] before quantising.
struct Image {
  int h = 0, w = 0, c = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h_, int w_, int c_) : h(h_), w(w_), c(c_), data(static_cast<size_t>(h_) * w_ * c_, 0.0f) {}

  float& at(int y, int x, int ch) { return data[(static_cast<size_t>(y) * w + x) * c + ch]; }
  float at(int y, int x, int ch) const { return data[(static_cast<size_t>(y) * w + x) * c + ch]; }
  size_t size() const { return data.size(); }
};

// PPM (P6, 8-bit) and PNG (8-bit RGB, zlib-compressed) writers. Quantisation
// is round(255 * clamp((v+1)/2, 0, 1)), identical for both formats, so a
// fixed float image always produces identical bytes.
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

}  // namespace kaleido
