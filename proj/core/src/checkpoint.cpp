// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#include "kaleido/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace kaleido {

namespace {

constexpr char kMagic[4] = {'K', 'L', 'D', 'C'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ofstream& f, uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }
void write_i32(std::ofstream& f, int32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t read_u32(std::ifstream& f) {
  uint32_t v;
  f.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
uint64_t read_u64(std::ifstream& f) {
  uint64_t v;
  f.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
int32_t read_i32(std::ifstream& f) {
  int32_t v;
  f.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

void write_blob(std::ofstream& f, const std::string& name, const float* data, uint32_t rows, uint32_t cols) {
  write_u32(f, static_cast<uint32_t>(name.size()));
  f.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(f, rows);
  write_u32(f, cols);
  f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(sizeof(float)) * rows * cols);
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  f.write(kMagic, 4);
  write_u32(f, kVersion);
  const ModelConfig& c = ckpt.config;
  for (int v : {c.layers, c.hidden, c.q_heads, c.kv_heads, c.window, c.patch, c.channels, c.registers, c.aux_dim,
                c.ffn_hidden, c.time_dim, c.time_sin_dim})
    write_i32(f, v);
  write_u64(f, ckpt.step);
  write_u64(f, ckpt.adam_t);
  uint32_t n_blobs = static_cast<uint32_t>(ckpt.params.layout->entries.size()) + (ckpt.has_opt ? 2 : 0);
  write_u32(f, n_blobs);
  for (const auto& e : ckpt.params.layout->entries)
    write_blob(f, e.name, ckpt.params.data.data() + e.offset, static_cast<uint32_t>(e.rows),
               static_cast<uint32_t>(e.cols));
  if (ckpt.has_opt) {
    write_blob(f, "opt.adam.m", ckpt.adam_m.data(), static_cast<uint32_t>(ckpt.adam_m.size()), 1);
    write_blob(f, "opt.adam.v", ckpt.adam_v.data(), static_cast<uint32_t>(ckpt.adam_v.size()), 1);
  }
  if (!f) throw std::runtime_error("short write: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("not a checkpoint file: " + path);
  uint32_t version = read_u32(f);
  if (version != kVersion)
    throw std::runtime_error("checkpoint version mismatch in " + path + " (got " + std::to_string(version) + ")");
  ModelConfig c;
  c.layers = read_i32(f);
  c.hidden = read_i32(f);
  c.q_heads = read_i32(f);
  c.kv_heads = read_i32(f);
  c.window = read_i32(f);
  c.patch = read_i32(f);
  c.channels = read_i32(f);
  c.registers = read_i32(f);
  c.aux_dim = read_i32(f);
  c.ffn_hidden = read_i32(f);
  c.time_dim = read_i32(f);
  c.time_sin_dim = read_i32(f);

  Checkpoint ckpt{.config = c, .step = 0, .params = ParamStore<float>(c)};
  ckpt.step = read_u64(f);
  ckpt.adam_t = read_u64(f);
  uint32_t n_blobs = read_u32(f);
  for (uint32_t b = 0; b < n_blobs; ++b) {
    uint32_t name_len = read_u32(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    uint32_t rows = read_u32(f), cols = read_u32(f);
    size_t count = static_cast<size_t>(rows) * cols;
    if (name == "opt.adam.m" || name == "opt.adam.v") {
      auto& dst = name == "opt.adam.m" ? ckpt.adam_m : ckpt.adam_v;
      dst.resize(count);
      f.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(sizeof(float) * count));
      ckpt.has_opt = true;
    } else {
      const auto& e = ckpt.params.layout->at(name);
      if (e.rows != static_cast<int>(rows) || e.cols != static_cast<int>(cols))
        throw std::runtime_error("checkpoint blob shape mismatch for " + name + " in " + path);
      f.read(reinterpret_cast<char*>(ckpt.params.data.data() + e.offset),
             static_cast<std::streamsize>(sizeof(float) * count));
    }
    if (!f) throw std::runtime_error("truncated checkpoint: " + path);
  }
  return ckpt;
}

}  // namespace kaleido
