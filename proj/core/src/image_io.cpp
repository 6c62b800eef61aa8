// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#include "kaleido/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace kaleido {

namespace {

uint8_t quantize(float v) {
  float u = (v + 1.0f) * 0.5f;
  u = std::clamp(u, 0.0f, 1.0f);
  return static_cast<uint8_t>(std::lround(u * 255.0f));
}

float dequantize(uint8_t q) { return static_cast<float>(q) / 255.0f * 2.0f - 1.0f; }

std::vector<uint8_t> to_rgb8(const Image& img) {
  if (img.c != 3) throw std::invalid_argument("image writers expect 3 channels");
  std::vector<uint8_t> out(img.size());
  for (size_t i = 0; i < img.size(); ++i) out[i] = quantize(img.data[i]);
  return out;
}

void put_u32_be(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(static_cast<uint8_t>(x >> 24));
  v.push_back(static_cast<uint8_t>(x >> 16));
  v.push_back(static_cast<uint8_t>(x >> 8));
  v.push_back(static_cast<uint8_t>(x));
}

uint32_t get_u32_be(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void append_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& payload) {
  put_u32_be(out, static_cast<uint32_t>(payload.size()));
  size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  uint32_t crc = crc32(0, out.data() + start, static_cast<uInt>(out.size() - start));
  put_u32_be(out, crc);
}

}  // namespace

void write_ppm(const std::string& path, const Image& img) {
  auto rgb = to_rgb8(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "P6\n" << img.w << " " << img.h << "\n255\n";
  f.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!f) throw std::runtime_error("short write: " + path);
}

Image read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw std::runtime_error("not a P6 ppm: " + path);
  int w, h, maxval;
  f >> w >> h >> maxval;
  if (maxval != 255) throw std::runtime_error("unsupported maxval in " + path);
  f.get();  // single whitespace after header
  Image img(h, w, 3);
  std::vector<uint8_t> rgb(img.size());
  f.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!f) throw std::runtime_error("short read: " + path);
  for (size_t i = 0; i < rgb.size(); ++i) img.data[i] = dequantize(rgb[i]);
  return img;
}

void write_png(const std::string& path, const Image& img) {
  auto rgb = to_rgb8(img);
  // Raw scanlines, filter byte 0 (None) per row.
  std::vector<uint8_t> raw(static_cast<size_t>(img.h) * (1 + static_cast<size_t>(img.w) * 3));
  for (int y = 0; y < img.h; ++y) {
    uint8_t* row = raw.data() + static_cast<size_t>(y) * (1 + img.w * 3);
    row[0] = 0;
    std::memcpy(row + 1, rgb.data() + static_cast<size_t>(y) * img.w * 3, static_cast<size_t>(img.w) * 3);
  }
  uLongf comp_bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> comp(comp_bound);
  if (compress2(comp.data(), &comp_bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("zlib compress failed");
  comp.resize(comp_bound);

  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<uint32_t>(img.w));
  put_u32_be(ihdr, static_cast<uint32_t>(img.h));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type RGB
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // no interlace
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", comp);
  append_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("short write: " + path);
}

Image read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0) throw std::runtime_error("not a png: " + path);

  size_t pos = 8;
  uint32_t w = 0, h = 0;
  int bit_depth = 0, color_type = 0;
  std::vector<uint8_t> idat;
  while (pos + 8 <= buf.size()) {
    uint32_t len = get_u32_be(buf.data() + pos);
    std::string type(reinterpret_cast<const char*>(buf.data() + pos + 4), 4);
    const uint8_t* payload = buf.data() + pos + 8;
    if (pos + 12 + len > buf.size()) throw std::runtime_error("truncated png: " + path);
    if (type == "IHDR") {
      w = get_u32_be(payload);
      h = get_u32_be(payload + 4);
      bit_depth = payload[8];
      color_type = payload[9];
      if (payload[12] != 0) throw std::runtime_error("interlaced png unsupported: " + path);
    } else if (type == "IDAT") {
      idat.insert(idat.end(), payload, payload + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (bit_depth != 8 || color_type != 2) throw std::runtime_error("only 8-bit RGB png supported: " + path);

  size_t stride = static_cast<size_t>(w) * 3;
  std::vector<uint8_t> raw(static_cast<size_t>(h) * (stride + 1));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK || raw_len != raw.size())
    throw std::runtime_error("zlib inflate failed: " + path);

  // Undo per-row filters (types 0-4).
  Image img(static_cast<int>(h), static_cast<int>(w), 3);
  std::vector<uint8_t> prev(stride, 0), cur(stride);
  for (uint32_t y = 0; y < h; ++y) {
    const uint8_t* row = raw.data() + static_cast<size_t>(y) * (stride + 1);
    int filter = row[0];
    const uint8_t* src = row + 1;
    for (size_t x = 0; x < stride; ++x) {
      int a = x >= 3 ? cur[x - 3] : 0;   // left
      int b = prev[x];                   // up
      int c = x >= 3 ? prev[x - 3] : 0;  // up-left
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: {
          int p = a + b - c;
          int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
          v += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
          break;
        }
        default: throw std::runtime_error("bad png filter: " + path);
      }
      cur[x] = static_cast<uint8_t>(v);
    }
    for (size_t x = 0; x < stride; ++x) img.data[static_cast<size_t>(y) * stride + x] = dequantize(cur[x]);
    std::swap(prev, cur);
  }
  return img;
}

}  // namespace kaleido
