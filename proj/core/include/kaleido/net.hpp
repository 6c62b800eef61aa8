// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "kaleido/rng.hpp"
#include "kaleido/tokens.hpp"

namespace kaleido {

// Backbone hyper-parameters. The per-head dimension hidden/q_heads must be
// divisible by 8 so both attention flavours can build their band layouts.
struct ModelConfig {
  int layers = 4;
  int hidden = 128;
  int q_heads = 4;
  int kv_heads = 1;
  int window = 2;   // K, temporal attention window
  int patch = 2;    // p
  int channels = 3;
  int registers = 1;
  int aux_dim = 0;       // per-token auxiliary feature width (reference views)
  int ffn_hidden = 0;    // 0 -> 8/3 * hidden rounded up to a multiple of 8
  int time_dim = 0;      // 0 -> hidden
  int time_sin_dim = 128;

  void validate() const;
  int head_dim() const { return hidden / q_heads; }
  int kv_dim() const { return kv_heads * head_dim(); }
  int patch_dim() const { return patch * patch * channels; }
  int embed_in_dim() const { return patch_dim() + aux_dim; }
  int ffn() const { return ffn_hidden > 0 ? ffn_hidden : ((hidden * 8 / 3 + 7) / 8) * 8; }
  int tdim() const { return time_dim > 0 ? time_dim : hidden; }

  bool operator==(const ModelConfig&) const = default;
};

// All learnable state lives in one flat buffer with a named-entry layout, so
// the optimiser, checkpointing and gradient checking can treat parameters
// uniformly. Entry names follow "layer3.temp.wq" / "embed.w" / "head.b".
struct ParamLayout {
  struct Entry {
    std::string name;
    ptrdiff_t offset = 0;
    int rows = 0, cols = 0;
    ptrdiff_t size() const { return static_cast<ptrdiff_t>(rows) * cols; }
  };
  std::vector<Entry> entries;
  std::unordered_map<std::string, int> index;
  ptrdiff_t total = 0;

  static ParamLayout build(const ModelConfig& cfg);
  const Entry& at(const std::string& name) const;
};

// Parameter buffers are max-aligned so Eigen's vectorised kernels see the
// same lane split regardless of where the buffer was allocated; float
// reductions over parameters are then bit-stable across call sites.
template <typename T>
using AlignedVec = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
struct ParamStore {
  ModelConfig cfg;
  std::shared_ptr<const ParamLayout> layout;
  AlignedVec<T> data;

  ParamStore() = default;
  explicit ParamStore(const ModelConfig& c);

  Eigen::Map<MatX<T>> mat(const std::string& name);
  Eigen::Map<const MatX<T>> mat(const std::string& name) const;
  void set_zero() { std::fill(data.begin(), data.end(), T(0)); }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out(cfg);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

// AdaLN gates start at zero: every block is the identity map at
// initialisation and the forward pass reduces to embed -> head.
template <typename T>
ParamStore<T> init_params(const ModelConfig& cfg, uint64_t seed);

// Cross-view attention instrumentation.
struct AttnStats {
  int max_keys_per_query = 0;
  long long num_queries = 0;
};

template <typename T>
struct ProbeTaps {
  // Hidden state after each transformer layer (post-residual, pre-norm).
  std::vector<MatX<T>> layer_output;
};

template <typename T>
struct ForwardCache;  // defined in net.cpp

template <typename T>
struct ForwardExtras {
  ForwardCache<T>* cache = nullptr;  // required for net_backward
  AttnStats* stats = nullptr;
  ProbeTaps<T>* taps = nullptr;
};

template <typename T>
class ForwardCacheHandle {
 public:
  ForwardCacheHandle();
  ~ForwardCacheHandle();
  ForwardCacheHandle(ForwardCacheHandle&&) noexcept;
  ForwardCacheHandle& operator=(ForwardCacheHandle&&) noexcept;
  ForwardCache<T>* get() { return cache_.get(); }

 private:
  std::unique_ptr<ForwardCache<T>> cache_;
};

// Velocity prediction for every token (patch-pixel space, P x N). The caller
// selects target columns; reference predictions carry no loss.
template <typename T>
MatX<T> net_forward(const ParamStore<T>& params, const SceneInput<T>& in, const ForwardExtras<T>& extras = {});

template <typename T>
void net_backward(const ParamStore<T>& params, const SceneInput<T>& in, const ForwardCache<T>& cache,
                  const MatX<T>& d_velocity, ParamStore<T>& grads);

// The AdaLN-Zero identity path: patch embed followed directly by the output
// head, skipping all transformer blocks. Equals net_forward bit-for-bit when
// all gates are zero.
template <typename T>
MatX<T> embed_head_path(const ParamStore<T>& params, const SceneInput<T>& in);

// One attention flavour of one layer applied to explicit per-token features,
// bypassing LayerNorm/AdaLN. Test and benchmark surface.
template <typename T>
MatX<T> attention_block(const ParamStore<T>& params, int layer, bool temporal, const SceneInput<T>& in,
                        const MatX<T>& h, AttnStats* stats = nullptr);

// x' = w_down * (swish(w_gate x) .* (w_up x))
template <typename T>
MatX<T> swiglu(const MatX<T>& x, const MatX<T>& w_gate, const MatX<T>& w_up, const MatX<T>& w_down);

// Max relative error between reverse-mode gradients of the masked flow loss
// and central finite differences over a stratified random subset of
// parameters (coords_per_tensor from every named tensor).
double grad_check(const ParamStore<double>& params, const SceneInput<double>& in, const MatX<double>& velocity_target,
                  int coords_per_tensor, uint64_t seed);

}  // namespace kaleido
