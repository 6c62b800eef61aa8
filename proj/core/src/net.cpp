// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only backbone: patch embed -> L x [spatial attention, windowed
// cross-view attention, SwiGLU] -> velocity head, with AdaLN-Zero timestep
// modulation around every sub-block. Forward and reverse passes are written
// by hand; ForwardCache carries the activations the reverse pass needs.
#include "kaleido/net.hpp"

#include <omp.h>

#include <cmath>
#include <limits>
#include <stdexcept>

#include "kaleido/flow.hpp"
#include "kaleido/threading.hpp"

namespace kaleido {

namespace {
constexpr double kLnEps = 1e-6;

template <typename T>
T silu(T x) {
  return x / (T(1) + std::exp(-x));
}

template <typename T>
T silu_grad(T x) {
  T s = T(1) / (T(1) + std::exp(-x));
  return s * (T(1) + x * (T(1) - s));
}
}  // namespace

void ModelConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("ModelConfig: layers must be >= 1");
  if (hidden < 8 || q_heads < 1 || kv_heads < 1) throw std::invalid_argument("ModelConfig: bad hidden/head counts");
  if (hidden % q_heads != 0) throw std::invalid_argument("ModelConfig: hidden must divide by q_heads");
  if (q_heads % kv_heads != 0) throw std::invalid_argument("ModelConfig: q_heads must divide by kv_heads");
  if (head_dim() % 8 != 0) throw std::invalid_argument("ModelConfig: head_dim must be divisible by 8");
  if (window < 1) throw std::invalid_argument("ModelConfig: window must be >= 1");
  if (patch < 1) throw std::invalid_argument("ModelConfig: patch must be >= 1");
  if (channels < 1) throw std::invalid_argument("ModelConfig: channels must be >= 1");
  if (registers < 0) throw std::invalid_argument("ModelConfig: registers must be >= 0");
  if (aux_dim < 0) throw std::invalid_argument("ModelConfig: aux_dim must be >= 0");
  if (time_sin_dim % 2 != 0) throw std::invalid_argument("ModelConfig: time_sin_dim must be even");
}

ParamLayout ParamLayout::build(const ModelConfig& cfg) {
  cfg.validate();
  ParamLayout l;
  const int D = cfg.hidden, Dkv = cfg.kv_dim(), F = cfg.ffn(), Ct = cfg.tdim();
  auto add = [&](const std::string& name, int rows, int cols) {
    Entry e{name, l.total, rows, cols};
    l.index[name] = static_cast<int>(l.entries.size());
    l.entries.push_back(e);
    l.total += e.size();
  };
  add("embed.w", D, cfg.embed_in_dim());
  add("embed.b", D, 1);
  add("time.w1", Ct, cfg.time_sin_dim);
  add("time.b1", Ct, 1);
  add("time.w2", Ct, Ct);
  add("time.b2", Ct, 1);
  for (int i = 0; i < cfg.layers; ++i) {
    std::string p = "layer" + std::to_string(i) + ".";
    for (const char* blk : {"spat.", "temp."}) {
      add(p + blk + "wq", D, D);
      add(p + blk + "wk", Dkv, D);
      add(p + blk + "wv", Dkv, D);
      add(p + blk + "wo", D, D);
      add(p + blk + "reg_k", Dkv, cfg.registers);
      add(p + blk + "reg_v", Dkv, cfg.registers);
    }
    add(p + "ffn.gate", F, D);
    add(p + "ffn.up", F, D);
    add(p + "ffn.down", D, F);
    add(p + "mod.w", 9 * D, Ct);
    add(p + "mod.b", 9 * D, 1);
  }
  add("head.mod_w", 2 * D, Ct);
  add("head.mod_b", 2 * D, 1);
  add("head.w", cfg.patch_dim(), D);
  add("head.b", cfg.patch_dim(), 1);
  return l;
}

const ParamLayout::Entry& ParamLayout::at(const std::string& name) const {
  auto it = index.find(name);
  if (it == index.end()) throw std::out_of_range("unknown parameter: " + name);
  return entries[it->second];
}

template <typename T>
ParamStore<T>::ParamStore(const ModelConfig& c)
    : cfg(c), layout(std::make_shared<ParamLayout>(ParamLayout::build(c))), data(layout->total, T(0)) {}

template <typename T>
Eigen::Map<MatX<T>> ParamStore<T>::mat(const std::string& name) {
  const auto& e = layout->at(name);
  return Eigen::Map<MatX<T>>(data.data() + e.offset, e.rows, e.cols);
}

template <typename T>
Eigen::Map<const MatX<T>> ParamStore<T>::mat(const std::string& name) const {
  const auto& e = layout->at(name);
  return Eigen::Map<const MatX<T>>(data.data() + e.offset, e.rows, e.cols);
}

template <typename T>
ParamStore<T> init_params(const ModelConfig& cfg, uint64_t seed) {
  ParamStore<T> p(cfg);
  Rng rng(Rng::mix(seed, 0x6b616c65696400ull));
  const T std_w = T(0.02);
  for (const auto& e : p.layout->entries) {
    // AdaLN modulation heads and all biases stay zero so every block starts
    // as the identity map.
    bool zero = e.name.find("mod") != std::string::npos || e.name.ends_with(".b") || e.name.ends_with(".b1") ||
                e.name.ends_with(".b2");
    if (zero) continue;
    T* ptr = p.data.data() + e.offset;
    for (ptrdiff_t i = 0; i < e.size(); ++i) ptr[i] = static_cast<T>(rng.normal()) * std_w;
  }
  return p;
}

// ---------------------------------------------------------------------------
// caches and shared plumbing

namespace {

template <typename T>
struct BlockCommon {
  MatX<T> ln;      // layer-normed input
  VecX<T> invstd;  // per token
  MatX<T> h;       // after AdaLN shift/scale
  MatX<T> y;       // sub-block output (pre-gate)
};

template <typename T>
struct AttnCache {
  BlockCommon<T> c;
  MatX<T> q_raw, q_t;
  MatX<T> k_t, v_t;
  MatX<T> pre_o;
  std::vector<MatX<T>> probs;  // [group * Hq + qh], nq x (nk + r)
};

template <typename T>
struct FfnCache {
  BlockCommon<T> c;
  MatX<T> gpre, u;
};

template <typename T>
struct LayerCache {
  AttnCache<T> spat, temp;
  FfnCache<T> ffn;
};

template <typename T>
struct CondCache {
  // index 0 = Reference (conditioned at t = 0), 1 = Target (scene t)
  VecX<T> e[2], h1pre[2], h1[2], c[2], cs[2];
  std::vector<VecX<T>> mod[2];  // per layer, 9D
  VecX<T> head_mod[2];          // 2D
};

struct AttnGroups {
  std::vector<std::vector<int>> q_idx;
  std::vector<std::vector<int>> k_idx;
  bool masked = false;
};

}  // namespace

template <typename T>
struct ForwardCache {
  std::vector<LayerCache<T>> layers;
  CondCache<T> cond;
  BlockCommon<T> head;
  std::vector<RepMatrix<T>> spat_reps;  // per location
  std::vector<RepMatrix<T>> temp_reps;  // per token
  AttnGroups spat_groups, temp_groups;
  std::vector<uint8_t> can;  // V x V attention permission, row-major
  std::vector<int> role_of_view;
};

template <typename T>
ForwardCacheHandle<T>::ForwardCacheHandle() : cache_(std::make_unique<ForwardCache<T>>()) {}
template <typename T>
ForwardCacheHandle<T>::~ForwardCacheHandle() = default;
template <typename T>
ForwardCacheHandle<T>::ForwardCacheHandle(ForwardCacheHandle&&) noexcept = default;
template <typename T>
ForwardCacheHandle<T>& ForwardCacheHandle<T>::operator=(ForwardCacheHandle&&) noexcept = default;

namespace {

template <typename T>
void layernorm_forward(const MatX<T>& x, MatX<T>& y, VecX<T>& invstd) {
  const Eigen::Index D = x.rows(), N = x.cols();
  y.resize(D, N);
  invstd.resize(N);
#pragma omp parallel for schedule(static)
  for (Eigen::Index n = 0; n < N; ++n) {
    T mean = x.col(n).mean();
    T var = (x.col(n).array() - mean).square().sum() / static_cast<T>(D);
    T inv = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
    y.col(n) = (x.col(n).array() - mean) * inv;
    invstd[n] = inv;
  }
}

template <typename T>
void layernorm_backward(const MatX<T>& y, const VecX<T>& invstd, const MatX<T>& dy, MatX<T>& dx) {
  const Eigen::Index N = y.cols();
  dx.resize(y.rows(), N);
#pragma omp parallel for schedule(static)
  for (Eigen::Index n = 0; n < N; ++n) {
    T m1 = dy.col(n).mean();
    T m2 = (dy.col(n).array() * y.col(n).array()).mean();
    dx.col(n) = invstd[n] * (dy.col(n).array() - m1 - y.col(n).array() * m2);
  }
}

template <typename T>
VecX<T> sincos_embed(double t, int sdim) {
  const int half = sdim / 2;
  VecX<T> e(sdim);
  for (int i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
    double a = 1000.0 * t * freq;
    e[i] = static_cast<T>(std::cos(a));
    e[half + i] = static_cast<T>(std::sin(a));
  }
  return e;
}

template <typename T>
void build_cond(const ParamStore<T>& P, double t, CondCache<T>& cond) {
  const ModelConfig& cfg = P.cfg;
  const double role_t[2] = {0.0, t};
  for (int r = 0; r < 2; ++r) {
    cond.e[r] = sincos_embed<T>(role_t[r], cfg.time_sin_dim);
    cond.h1pre[r] = P.mat("time.w1") * cond.e[r] + P.mat("time.b1").col(0);
    cond.h1[r] = cond.h1pre[r].unaryExpr([](T x) { return silu(x); });
    cond.c[r] = P.mat("time.w2") * cond.h1[r] + P.mat("time.b2").col(0);
    cond.cs[r] = cond.c[r].unaryExpr([](T x) { return silu(x); });
    cond.mod[r].resize(cfg.layers);
    for (int l = 0; l < cfg.layers; ++l) {
      std::string p = "layer" + std::to_string(l) + ".";
      cond.mod[r][l] = P.mat(p + "mod.w") * cond.cs[r] + P.mat(p + "mod.b").col(0);
    }
    cond.head_mod[r] = P.mat("head.mod_w") * cond.cs[r] + P.mat("head.mod_b").col(0);
  }
}

// AdaLN modulation: h = ln .* (1 + scale_role) + shift_role, column-wise.
// `mod0` / `mod1` hold the packed modulation vectors of the two roles and
// `off` selects the shift segment (scale sits at off + D).
template <typename T>
void modulate_forward(const MatX<T>& ln, const std::vector<int>& role_of_view, int L, const VecX<T>& mod0,
                      const VecX<T>& mod1, int off, int D, MatX<T>& h) {
  const Eigen::Index N = ln.cols();
  h.resize(D, N);
#pragma omp parallel for schedule(static)
  for (Eigen::Index n = 0; n < N; ++n) {
    const VecX<T>& m = role_of_view[static_cast<int>(n) / L] ? mod1 : mod0;
    h.col(n) = ln.col(n).array() * (m.segment(off + D, D).array() + T(1)) + m.segment(off, D).array();
  }
}

template <typename T>
void modulate_backward(const MatX<T>& ln, const MatX<T>& dh, const std::vector<int>& role_of_view, int L,
                       const VecX<T>& mod0, const VecX<T>& mod1, int off, int D, MatX<T>& dln, VecX<T>& dmod0,
                       VecX<T>& dmod1) {
  const Eigen::Index N = ln.cols();
  dln.resize(D, N);
  for (Eigen::Index n = 0; n < N; ++n) {
    int r = role_of_view[static_cast<int>(n) / L];
    const VecX<T>& m = r ? mod1 : mod0;
    VecX<T>& dm = r ? dmod1 : dmod0;
    dm.segment(off, D) += dh.col(n);
    dm.segment(off + D, D).array() += dh.col(n).array() * ln.col(n).array();
    dln.col(n) = dh.col(n).array() * (m.segment(off + D, D).array() + T(1));
  }
}

AttnGroups build_spatial_groups(int V, int L) {
  AttnGroups g;
  g.q_idx.resize(V);
  g.k_idx.resize(V);
  for (int v = 0; v < V; ++v) {
    g.q_idx[v].resize(L);
    for (int i = 0; i < L; ++i) g.q_idx[v][i] = v * L + i;
    g.k_idx[v] = g.q_idx[v];
  }
  return g;
}

AttnGroups build_temporal_groups(int V, int gh, int gw, int K) {
  AttnGroups g;
  g.masked = true;
  const int L = gh * gw;
  g.q_idx.resize(L);
  g.k_idx.resize(L);
  for (int i = 0; i < gh; ++i)
    for (int j = 0; j < gw; ++j) {
      int loc = i * gw + j;
      g.q_idx[loc].resize(V);
      for (int v = 0; v < V; ++v) g.q_idx[loc][v] = v * L + loc;
      // K x K window around (i, j), clipped at the grid edges.
      int i_lo = std::max(0, i - (K - 1) / 2), i_hi = std::min(gh - 1, i + K / 2);
      int j_lo = std::max(0, j - (K - 1) / 2), j_hi = std::min(gw - 1, j + K / 2);
      auto& keys = g.k_idx[loc];
      keys.reserve(static_cast<size_t>(V) * (i_hi - i_lo + 1) * (j_hi - j_lo + 1));
      for (int wi = i_lo; wi <= i_hi; ++wi)
        for (int wj = j_lo; wj <= j_hi; ++wj)
          for (int v = 0; v < V; ++v) keys.push_back(v * L + wi * gw + wj);
    }
  return g;
}

template <typename T>
struct AttnW {
  Eigen::Map<const MatX<T>> wq, wk, wv, wo, reg_k, reg_v;
  AttnW(const ParamStore<T>& P, const std::string& prefix)
      : wq(P.mat(prefix + "wq")),
        wk(P.mat(prefix + "wk")),
        wv(P.mat(prefix + "wv")),
        wo(P.mat(prefix + "wo")),
        reg_k(P.mat(prefix + "reg_k")),
        reg_v(P.mat(prefix + "reg_v")) {}
};

template <typename T>
struct AttnGradW {
  Eigen::Map<MatX<T>> wq, wk, wv, wo, reg_k, reg_v;
  AttnGradW(ParamStore<T>& G, const std::string& prefix)
      : wq(G.mat(prefix + "wq")),
        wk(G.mat(prefix + "wk")),
        wv(G.mat(prefix + "wv")),
        wo(G.mat(prefix + "wo")),
        reg_k(G.mat(prefix + "reg_k")),
        reg_v(G.mat(prefix + "reg_v")) {}
};

// Row softmax with max subtraction; the normalising sum is accumulated in
// double regardless of T.
template <typename T>
void softmax_rows(MatX<T>& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    T m = s.row(i).maxCoeff();
    double acc = 0.0;
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      T e = std::exp(s(i, j) - m);
      s(i, j) = e;
      acc += static_cast<double>(e);
    }
    s.row(i) *= static_cast<T>(1.0 / acc);
  }
}

// One attention flavour over the given groups. Every query token appears in
// exactly one group; key sets may overlap across groups (windows). Register
// keys score against the untransformed query and register values join the
// output after the inverse transform, so they stay independent of absolute
// attributes.
//
// All query heads sharing one kv head are processed in a single GEMM: a
// contiguous (gs*d x nq) row block of q is reinterpreted as (d x gs*nq), so
// score rows come out token-major, head-minor. probs are cached per
// (group, kv head).
template <typename T>
void attention_forward(const SceneInput<T>& in, const AttnW<T>& W, int Hq, int Hkv,
                       const std::vector<RepMatrix<T>>& reps, bool reps_per_location, const AttnGroups& groups,
                       const std::vector<uint8_t>& can, AttnCache<T>& cache, AttnStats* stats) {
  const Eigen::Index D = W.wq.rows(), N = cache.c.h.cols();
  const int d = static_cast<int>(D) / Hq;
  const int r = static_cast<int>(W.reg_k.cols());
  const int gs = Hq / Hkv;  // query heads per kv head
  const int L = in.tokens_per_view();
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
  const T neg_inf = -std::numeric_limits<T>::infinity();

  cache.q_raw.noalias() = W.wq * cache.c.h;
  cache.k_t.noalias() = W.wk * cache.c.h;
  cache.v_t.noalias() = W.wv * cache.c.h;
  cache.q_t = cache.q_raw;

  auto rep_of = [&](int token) -> const RepMatrix<T>& { return reps_per_location ? reps[token % L] : reps[token]; };

#pragma omp parallel for schedule(static)
  for (Eigen::Index n = 0; n < N; ++n) {
    const RepMatrix<T>& rep = rep_of(static_cast<int>(n));
    for (int qh = 0; qh < Hq; ++qh) {
      T* col = cache.q_t.data() + n * D + qh * d;
      rep_apply(rep, RepOp::InverseTranspose, col, col);
    }
    for (int kh = 0; kh < Hkv; ++kh) {
      T* ck = cache.k_t.data() + n * (Hkv * d) + kh * d;
      rep_apply(rep, RepOp::Forward, ck, ck);
      T* cv = cache.v_t.data() + n * (Hkv * d) + kh * d;
      rep_apply(rep, RepOp::Forward, cv, cv);
    }
  }

  const int n_groups = static_cast<int>(groups.q_idx.size());
  cache.probs.assign(static_cast<size_t>(n_groups) * Hkv, MatX<T>());
  cache.pre_o.resize(D, N);
  int max_keys = 0;

#pragma omp parallel for schedule(static) reduction(max : max_keys)
  for (int g = 0; g < n_groups; ++g) {
    const auto& qi = groups.q_idx[g];
    const auto& ki = groups.k_idx[g];
    const int nq = static_cast<int>(qi.size()), nk = static_cast<int>(ki.size());
    MatX<T> Kg(Hkv * d, nk), Vg(Hkv * d, nk);
    for (int j = 0; j < nk; ++j) {
      Kg.col(j) = cache.k_t.col(ki[j]);
      Vg.col(j) = cache.v_t.col(ki[j]);
    }
    MatX<T> Qg(gs * d, nq), Qraw(gs * d, nq), ctx(d, static_cast<Eigen::Index>(gs) * nq);
    for (int kvh = 0; kvh < Hkv; ++kvh) {
      for (int i = 0; i < nq; ++i) Qg.col(i) = cache.q_t.col(qi[i]).segment(kvh * gs * d, gs * d);
      Eigen::Map<const MatX<T>> Qv(Qg.data(), d, static_cast<Eigen::Index>(gs) * nq);
      MatX<T> S(static_cast<Eigen::Index>(gs) * nq, nk + r);
      S.leftCols(nk).noalias() = Qv.transpose() * Kg.middleRows(kvh * d, d) * inv_sqrt_d;
      if (r > 0) {
        for (int i = 0; i < nq; ++i) Qraw.col(i) = cache.q_raw.col(qi[i]).segment(kvh * gs * d, gs * d);
        Eigen::Map<const MatX<T>> Qrv(Qraw.data(), d, static_cast<Eigen::Index>(gs) * nq);
        S.rightCols(r).noalias() = Qrv.transpose() * W.reg_k.middleRows(kvh * d, d) * inv_sqrt_d;
      }
      if (groups.masked) {
        for (int i = 0; i < nq; ++i) {
          int qv = qi[i] / L;
          for (int j = 0; j < nk; ++j)
            if (!can[static_cast<size_t>(qv) * in.V + ki[j] / L]) S.block(i * gs, j, gs, 1).setConstant(neg_inf);
        }
      }
      softmax_rows(S);

      ctx.noalias() = Vg.middleRows(kvh * d, d) * S.leftCols(nk).transpose();
      for (Eigen::Index c = 0; c < ctx.cols(); ++c) {
        T* p = ctx.data() + c * d;
        rep_apply(rep_of(qi[c / gs]), RepOp::Inverse, p, p);
      }
      if (r > 0) ctx.noalias() += W.reg_v.middleRows(kvh * d, d) * S.rightCols(r).transpose();
      Eigen::Map<const MatX<T>> ctx_tok(ctx.data(), static_cast<Eigen::Index>(gs) * d, nq);
      for (int i = 0; i < nq; ++i) cache.pre_o.col(qi[i]).segment(kvh * gs * d, gs * d) = ctx_tok.col(i);
      cache.probs[static_cast<size_t>(g) * Hkv + kvh] = std::move(S);
    }
    if (groups.masked && stats) {
      for (int i = 0; i < nq; ++i) {
        int qv = qi[i] / L;
        int cnt = r;
        for (int j = 0; j < nk; ++j) cnt += can[static_cast<size_t>(qv) * in.V + ki[j] / L] ? 1 : 0;
        max_keys = std::max(max_keys, cnt);
      }
    }
  }
  if (groups.masked && stats) {
    stats->max_keys_per_query = std::max(stats->max_keys_per_query, max_keys);
    stats->num_queries += N;
  }
  cache.c.y.noalias() = W.wo * cache.pre_o;
}

template <typename T>
void attention_backward(const SceneInput<T>& in, const AttnW<T>& W, int Hq, int Hkv,
                        const std::vector<RepMatrix<T>>& reps, bool reps_per_location, const AttnGroups& groups,
                        const AttnCache<T>& cache, const MatX<T>& dy, AttnGradW<T>& G, MatX<T>& dh) {
  const Eigen::Index D = W.wq.rows(), N = cache.c.h.cols();
  const Eigen::Index Dkv = W.wk.rows();
  const int d = static_cast<int>(D) / Hq;
  const int r = static_cast<int>(W.reg_k.cols());
  const int group_size = Hq / Hkv;
  const int L = in.tokens_per_view();
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));

  G.wo.noalias() += dy * cache.pre_o.transpose();
  MatX<T> d_pre = W.wo.transpose() * dy;

  MatX<T> dq_t = MatX<T>::Zero(D, N);
  MatX<T> dq_raw = MatX<T>::Zero(D, N);
  // Key/value token gradients overlap across groups; per-thread accumulators
  // are reduced in thread order for reproducibility.
  const int nt = num_threads();
  std::vector<MatX<T>> dk_loc(nt, MatX<T>::Zero(Dkv, N)), dv_loc(nt, MatX<T>::Zero(Dkv, N));
  std::vector<MatX<T>> drk_loc(nt, MatX<T>::Zero(Dkv, r)), drv_loc(nt, MatX<T>::Zero(Dkv, r));

  auto rep_of = [&](int token) -> const RepMatrix<T>& { return reps_per_location ? reps[token % L] : reps[token]; };
  const int n_groups = static_cast<int>(groups.q_idx.size());

#pragma omp parallel num_threads(nt)
  {
    const int tid = omp_get_thread_num();
#pragma omp for schedule(static)
    for (int g = 0; g < n_groups; ++g) {
      const auto& qi = groups.q_idx[g];
      const auto& ki = groups.k_idx[g];
      const int nq = static_cast<int>(qi.size()), nk = static_cast<int>(ki.size());
      const int gs = group_size;
      MatX<T> Kg(Dkv, nk), Vg(Dkv, nk);
      for (int j = 0; j < nk; ++j) {
        Kg.col(j) = cache.k_t.col(ki[j]);
        Vg.col(j) = cache.v_t.col(ki[j]);
      }
      MatX<T> dKg = MatX<T>::Zero(Dkv, nk), dVg = MatX<T>::Zero(Dkv, nk);
      const Eigen::Index cols = static_cast<Eigen::Index>(gs) * nq;
      MatX<T> d_ctx(d, cols), d_ctx_real(d, cols), dP(cols, nk + r), dS(cols, nk + r), Qg(gs * d, nq);
      for (int kvh = 0; kvh < Hkv; ++kvh) {
        const MatX<T>& P = cache.probs[static_cast<size_t>(g) * Hkv + kvh];

        for (int i = 0; i < nq; ++i) Qg.col(i) = d_pre.col(qi[i]).segment(kvh * gs * d, gs * d);
        d_ctx = Eigen::Map<const MatX<T>>(Qg.data(), d, cols);
        // out = rep^-1(ctx_real) + register path; (rep^-1)^T = rep^-T.
        for (Eigen::Index c = 0; c < cols; ++c)
          rep_apply(rep_of(qi[c / gs]), RepOp::InverseTranspose, d_ctx.col(c).data(), d_ctx_real.col(c).data());

        dP.leftCols(nk).noalias() = d_ctx_real.transpose() * Vg.middleRows(kvh * d, d);
        dVg.middleRows(kvh * d, d).noalias() += d_ctx_real * P.leftCols(nk);
        if (r > 0) {
          dP.rightCols(r).noalias() = d_ctx.transpose() * W.reg_v.middleRows(kvh * d, d);
          drv_loc[tid].middleRows(kvh * d, d).noalias() += d_ctx * P.rightCols(r);
        }
        // softmax backward (rows); masked columns have P = 0, hence dS = 0.
        for (Eigen::Index i = 0; i < cols; ++i) {
          T dot = dP.row(i).dot(P.row(i));
          dS.row(i) = P.row(i).array() * (dP.row(i).array() - dot);
        }
        dS *= inv_sqrt_d;

        MatX<T> dQv = Kg.middleRows(kvh * d, d) * dS.leftCols(nk).transpose();  // d x (gs*nq)
        Eigen::Map<const MatX<T>> dQ_tok(dQv.data(), static_cast<Eigen::Index>(gs) * d, nq);
        for (int i = 0; i < nq; ++i) dq_t.col(qi[i]).segment(kvh * gs * d, gs * d) += dQ_tok.col(i);
        if (r > 0) {
          dQv.noalias() = W.reg_k.middleRows(kvh * d, d) * dS.rightCols(r).transpose();
          Eigen::Map<const MatX<T>> dQr_tok(dQv.data(), static_cast<Eigen::Index>(gs) * d, nq);
          for (int i = 0; i < nq; ++i) dq_raw.col(qi[i]).segment(kvh * gs * d, gs * d) += dQr_tok.col(i);
        }

        for (int i = 0; i < nq; ++i) Qg.col(i) = cache.q_t.col(qi[i]).segment(kvh * gs * d, gs * d);
        Eigen::Map<const MatX<T>> Qv(Qg.data(), d, cols);
        dKg.middleRows(kvh * d, d).noalias() += Qv * dS.leftCols(nk);
        if (r > 0) {
          for (int i = 0; i < nq; ++i) Qg.col(i) = cache.q_raw.col(qi[i]).segment(kvh * gs * d, gs * d);
          drk_loc[tid].middleRows(kvh * d, d).noalias() += Qv * dS.rightCols(r);
        }
      }
      for (int j = 0; j < nk; ++j) {
        dk_loc[tid].col(ki[j]) += dKg.col(j);
        dv_loc[tid].col(ki[j]) += dVg.col(j);
      }
    }
  }
  for (int t = 1; t < nt; ++t) {
    dk_loc[0] += dk_loc[t];
    dv_loc[0] += dv_loc[t];
    if (r > 0) {
      drk_loc[0] += drk_loc[t];
      drv_loc[0] += drv_loc[t];
    }
  }
  if (r > 0) {
    G.reg_k.noalias() += drk_loc[0];
    G.reg_v.noalias() += drv_loc[0];
  }

  // Undo the per-token transforms: the gradient through y = A x is A^T dy.
  MatX<T>& dk = dk_loc[0];
  MatX<T>& dv = dv_loc[0];
#pragma omp parallel for schedule(static)
  for (Eigen::Index n = 0; n < N; ++n) {
    const RepMatrix<T>& rep = rep_of(static_cast<int>(n));
    for (int qh = 0; qh < Hq; ++qh) {
      T* c = dq_t.data() + n * D + qh * d;
      rep_apply(rep, RepOp::Inverse, c, c);
    }
    for (int kh = 0; kh < Hkv; ++kh) {
      T* ck = dk.data() + n * Dkv + kh * d;
      rep_apply(rep, RepOp::Transpose, ck, ck);
      T* cv = dv.data() + n * Dkv + kh * d;
      rep_apply(rep, RepOp::Transpose, cv, cv);
    }
  }
  dq_t += dq_raw;

  G.wq.noalias() += dq_t * cache.c.h.transpose();
  G.wk.noalias() += dk * cache.c.h.transpose();
  G.wv.noalias() += dv * cache.c.h.transpose();
  dh.noalias() = W.wq.transpose() * dq_t;
  dh.noalias() += W.wk.transpose() * dk;
  dh.noalias() += W.wv.transpose() * dv;
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
MatX<T> net_forward(const ParamStore<T>& P, const SceneInput<T>& in, const ForwardExtras<T>& extras) {
  const ModelConfig& cfg = P.cfg;
  cfg.validate();
  const int D = cfg.hidden, L = in.tokens_per_view(), N = in.num_tokens();
  if (in.patches.rows() != cfg.patch_dim() || in.patches.cols() != N)
    throw std::invalid_argument("net_forward: patch matrix shape mismatch");
  if (in.aux.rows() != cfg.aux_dim) throw std::invalid_argument("net_forward: aux feature rows != aux_dim");
  if (in.mode == AttrMode::ThreeD && static_cast<int>(in.poses.size()) != in.V)
    throw std::invalid_argument("net_forward: missing poses");
  if (in.mode == AttrMode::Video && static_cast<int>(in.frames.size()) != in.V)
    throw std::invalid_argument("net_forward: missing frame indices");
  bool any_target = false;
  for (int v = 0; v < in.V; ++v) any_target |= (in.split.roles[v] == ViewRole::Target && in.split.visible[v]);
  if (!any_target) throw std::invalid_argument("net_forward: no visible target views");

  ForwardCache<T> local;
  ForwardCache<T>& C = extras.cache ? *extras.cache : local;

  const RepLayout spat_layout = RepLayout::spatial(cfg.head_dim(), in.gh, in.gw);
  const RepLayout temp_layout =
      RepLayout::temporal(cfg.head_dim(), in.gh, in.gw, in.mode, in.num_frames > 0 ? in.num_frames : in.V);
  C.spat_reps.resize(L);
  for (int loc = 0; loc < L; ++loc) C.spat_reps[loc] = rep_matrix<T>(token_attr(in, loc), spat_layout);
  C.temp_reps.resize(N);
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) C.temp_reps[n] = rep_matrix<T>(token_attr(in, n), temp_layout);
  C.spat_groups = build_spatial_groups(in.V, L);
  C.temp_groups = build_temporal_groups(in.V, in.gh, in.gw, cfg.window);
  C.can.assign(static_cast<size_t>(in.V) * in.V, 0);
  for (int qv = 0; qv < in.V; ++qv)
    for (int kv = 0; kv < in.V; ++kv) C.can[static_cast<size_t>(qv) * in.V + kv] = view_can_attend(in.split, qv, kv);
  C.role_of_view.resize(in.V);
  for (int v = 0; v < in.V; ++v) C.role_of_view[v] = in.split.roles[v] == ViewRole::Target ? 1 : 0;

  build_cond(P, in.t, C.cond);

  MatX<T> x;
  x.noalias() = P.mat("embed.w").leftCols(cfg.patch_dim()) * in.patches;
  if (cfg.aux_dim > 0) x.noalias() += P.mat("embed.w").rightCols(cfg.aux_dim) * in.aux;
  x.colwise() += P.mat("embed.b").col(0);

  C.layers.resize(cfg.layers);
  if (extras.taps) extras.taps->layer_output.clear();

  auto gate_add = [&](MatX<T>& xs, const MatX<T>& y, const VecX<T>& m0, const VecX<T>& m1, int gate_off) {
#pragma omp parallel for schedule(static)
    for (int n = 0; n < N; ++n) {
      const VecX<T>& m = C.role_of_view[n / L] ? m1 : m0;
      xs.col(n).array() += y.col(n).array() * m.segment(gate_off, D).array();
    }
  };

  for (int l = 0; l < cfg.layers; ++l) {
    LayerCache<T>& LC = C.layers[l];
    const VecX<T>& m0 = C.cond.mod[0][l];
    const VecX<T>& m1 = C.cond.mod[1][l];
    const std::string lp = "layer" + std::to_string(l) + ".";

    {  // spatial attention
      AttnCache<T>& A = LC.spat;
      layernorm_forward(x, A.c.ln, A.c.invstd);
      modulate_forward(A.c.ln, C.role_of_view, L, m0, m1, 0, D, A.c.h);
      AttnW<T> W(P, lp + "spat.");
      attention_forward(in, W, cfg.q_heads, cfg.kv_heads, C.spat_reps, true, C.spat_groups, C.can, A, nullptr);
      gate_add(x, A.c.y, m0, m1, 2 * D);
    }
    {  // temporal window attention
      AttnCache<T>& A = LC.temp;
      layernorm_forward(x, A.c.ln, A.c.invstd);
      modulate_forward(A.c.ln, C.role_of_view, L, m0, m1, 3 * D, D, A.c.h);
      AttnW<T> W(P, lp + "temp.");
      attention_forward(in, W, cfg.q_heads, cfg.kv_heads, C.temp_reps, false, C.temp_groups, C.can, A, extras.stats);
      gate_add(x, A.c.y, m0, m1, 5 * D);
    }
    {  // SwiGLU feed-forward
      FfnCache<T>& F = LC.ffn;
      layernorm_forward(x, F.c.ln, F.c.invstd);
      modulate_forward(F.c.ln, C.role_of_view, L, m0, m1, 6 * D, D, F.c.h);
      F.gpre.noalias() = P.mat(lp + "ffn.gate") * F.c.h;
      F.u.noalias() = P.mat(lp + "ffn.up") * F.c.h;
      MatX<T> act = F.gpre.unaryExpr([](T v) { return silu(v); }).cwiseProduct(F.u);
      F.c.y.noalias() = P.mat(lp + "ffn.down") * act;
      gate_add(x, F.c.y, m0, m1, 8 * D);
    }
    if (extras.taps) extras.taps->layer_output.push_back(x);
  }

  layernorm_forward(x, C.head.ln, C.head.invstd);
  modulate_forward(C.head.ln, C.role_of_view, L, C.cond.head_mod[0], C.cond.head_mod[1], 0, D, C.head.h);
  MatX<T> vel;
  vel.noalias() = P.mat("head.w") * C.head.h;
  vel.colwise() += P.mat("head.b").col(0);
  return vel;
}

template <typename T>
void net_backward(const ParamStore<T>& P, const SceneInput<T>& in, const ForwardCache<T>& C,
                  const MatX<T>& d_velocity, ParamStore<T>& grads) {
  const ModelConfig& cfg = P.cfg;
  const int D = cfg.hidden, L = in.tokens_per_view(), N = in.num_tokens();

  std::vector<VecX<T>> dmod[2];
  VecX<T> dhead_mod[2], dcs[2];
  for (int r = 0; r < 2; ++r) {
    dmod[r].assign(cfg.layers, VecX<T>::Zero(9 * D));
    dhead_mod[r] = VecX<T>::Zero(2 * D);
    dcs[r] = VecX<T>::Zero(cfg.tdim());
  }

  // head
  grads.mat("head.w").noalias() += d_velocity * C.head.h.transpose();
  grads.mat("head.b").col(0) += d_velocity.rowwise().sum();
  MatX<T> dh = P.mat("head.w").transpose() * d_velocity;
  MatX<T> dln, dx, dx2;
  modulate_backward(C.head.ln, dh, C.role_of_view, L, C.cond.head_mod[0], C.cond.head_mod[1], 0, D, dln, dhead_mod[0],
                    dhead_mod[1]);
  layernorm_backward(C.head.ln, C.head.invstd, dln, dx);

  for (int l = cfg.layers - 1; l >= 0; --l) {
    const LayerCache<T>& LC = C.layers[l];
    const std::string lp = "layer" + std::to_string(l) + ".";
    const VecX<T>& m0 = C.cond.mod[0][l];
    const VecX<T>& m1 = C.cond.mod[1][l];

    auto gate_backward = [&](const BlockCommon<T>& B, int gate_off, MatX<T>& dy_out) {
      dy_out.resize(D, N);
      for (int n = 0; n < N; ++n) {
        int rr = C.role_of_view[n / L];
        const VecX<T>& m = rr ? m1 : m0;
        dmod[rr][l].segment(gate_off, D).array() += dx.col(n).array() * B.y.col(n).array();
        dy_out.col(n) = dx.col(n).array() * m.segment(gate_off, D).array();
      }
    };

    {  // SwiGLU backward
      const FfnCache<T>& F = LC.ffn;
      MatX<T> dy;
      gate_backward(F.c, 8 * D, dy);
      MatX<T> act = F.gpre.unaryExpr([](T v) { return silu(v); }).cwiseProduct(F.u);
      grads.mat(lp + "ffn.down").noalias() += dy * act.transpose();
      MatX<T> dact = P.mat(lp + "ffn.down").transpose() * dy;
      MatX<T> dgpre = dact.cwiseProduct(F.u).cwiseProduct(F.gpre.unaryExpr([](T v) { return silu_grad(v); }));
      MatX<T> du = dact.cwiseProduct(F.gpre.unaryExpr([](T v) { return silu(v); }));
      grads.mat(lp + "ffn.gate").noalias() += dgpre * F.c.h.transpose();
      grads.mat(lp + "ffn.up").noalias() += du * F.c.h.transpose();
      MatX<T> dhm = P.mat(lp + "ffn.gate").transpose() * dgpre;
      dhm.noalias() += P.mat(lp + "ffn.up").transpose() * du;
      modulate_backward(F.c.ln, dhm, C.role_of_view, L, m0, m1, 6 * D, D, dln, dmod[0][l], dmod[1][l]);
      layernorm_backward(F.c.ln, F.c.invstd, dln, dx2);
      dx += dx2;
    }
    {  // temporal attention backward
      const AttnCache<T>& A = LC.temp;
      MatX<T> dy;
      gate_backward(A.c, 5 * D, dy);
      AttnW<T> W(P, lp + "temp.");
      AttnGradW<T> G(grads, lp + "temp.");
      MatX<T> dhm;
      attention_backward(in, W, cfg.q_heads, cfg.kv_heads, C.temp_reps, false, C.temp_groups, A, dy, G, dhm);
      modulate_backward(A.c.ln, dhm, C.role_of_view, L, m0, m1, 3 * D, D, dln, dmod[0][l], dmod[1][l]);
      layernorm_backward(A.c.ln, A.c.invstd, dln, dx2);
      dx += dx2;
    }
    {  // spatial attention backward
      const AttnCache<T>& A = LC.spat;
      MatX<T> dy;
      gate_backward(A.c, 2 * D, dy);
      AttnW<T> W(P, lp + "spat.");
      AttnGradW<T> G(grads, lp + "spat.");
      MatX<T> dhm;
      attention_backward(in, W, cfg.q_heads, cfg.kv_heads, C.spat_reps, true, C.spat_groups, A, dy, G, dhm);
      modulate_backward(A.c.ln, dhm, C.role_of_view, L, m0, m1, 0, D, dln, dmod[0][l], dmod[1][l]);
      layernorm_backward(A.c.ln, A.c.invstd, dln, dx2);
      dx += dx2;
    }
  }

  grads.mat("embed.w").leftCols(cfg.patch_dim()).noalias() += dx * in.patches.transpose();
  if (cfg.aux_dim > 0) grads.mat("embed.w").rightCols(cfg.aux_dim).noalias() += dx * in.aux.transpose();
  grads.mat("embed.b").col(0) += dx.rowwise().sum();

  // conditioning chain
  for (int r = 0; r < 2; ++r) {
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string lp = "layer" + std::to_string(l) + ".";
      grads.mat(lp + "mod.w").noalias() += dmod[r][l] * C.cond.cs[r].transpose();
      grads.mat(lp + "mod.b").col(0) += dmod[r][l];
      dcs[r].noalias() += P.mat(lp + "mod.w").transpose() * dmod[r][l];
    }
    grads.mat("head.mod_w").noalias() += dhead_mod[r] * C.cond.cs[r].transpose();
    grads.mat("head.mod_b").col(0) += dhead_mod[r];
    dcs[r].noalias() += P.mat("head.mod_w").transpose() * dhead_mod[r];

    VecX<T> dc = dcs[r].cwiseProduct(C.cond.c[r].unaryExpr([](T v) { return silu_grad(v); }));
    grads.mat("time.w2").noalias() += dc * C.cond.h1[r].transpose();
    grads.mat("time.b2").col(0) += dc;
    VecX<T> dh1 = P.mat("time.w2").transpose() * dc;
    VecX<T> dh1pre = dh1.cwiseProduct(C.cond.h1pre[r].unaryExpr([](T v) { return silu_grad(v); }));
    grads.mat("time.w1").noalias() += dh1pre * C.cond.e[r].transpose();
    grads.mat("time.b1").col(0) += dh1pre;
  }
}

template <typename T>
MatX<T> embed_head_path(const ParamStore<T>& P, const SceneInput<T>& in) {
  const ModelConfig& cfg = P.cfg;
  const int D = cfg.hidden, L = in.tokens_per_view();
  MatX<T> x;
  x.noalias() = P.mat("embed.w").leftCols(cfg.patch_dim()) * in.patches;
  if (cfg.aux_dim > 0) x.noalias() += P.mat("embed.w").rightCols(cfg.aux_dim) * in.aux;
  x.colwise() += P.mat("embed.b").col(0);

  CondCache<T> cond;
  build_cond(P, in.t, cond);
  std::vector<int> role_of_view(in.V);
  for (int v = 0; v < in.V; ++v) role_of_view[v] = in.split.roles[v] == ViewRole::Target ? 1 : 0;

  MatX<T> ln;
  VecX<T> invstd;
  layernorm_forward(x, ln, invstd);
  MatX<T> h;
  modulate_forward(ln, role_of_view, L, cond.head_mod[0], cond.head_mod[1], 0, D, h);
  MatX<T> vel;
  vel.noalias() = P.mat("head.w") * h;
  vel.colwise() += P.mat("head.b").col(0);
  return vel;
}

template <typename T>
MatX<T> attention_block(const ParamStore<T>& params, int layer, bool temporal, const SceneInput<T>& in,
                        const MatX<T>& h, AttnStats* stats) {
  const ModelConfig& cfg = params.cfg;
  const int L = in.tokens_per_view(), N = in.num_tokens();
  AttnCache<T> cache;
  cache.c.h = h;
  std::vector<uint8_t> can(static_cast<size_t>(in.V) * in.V, 0);
  for (int qv = 0; qv < in.V; ++qv)
    for (int kv = 0; kv < in.V; ++kv) can[static_cast<size_t>(qv) * in.V + kv] = view_can_attend(in.split, qv, kv);
  const std::string prefix = "layer" + std::to_string(layer) + (temporal ? ".temp." : ".spat.");
  AttnW<T> W(params, prefix);
  if (temporal) {
    const RepLayout layout =
        RepLayout::temporal(cfg.head_dim(), in.gh, in.gw, in.mode, in.num_frames > 0 ? in.num_frames : in.V);
    std::vector<RepMatrix<T>> reps(N);
    for (int n = 0; n < N; ++n) reps[n] = rep_matrix<T>(token_attr(in, n), layout);
    AttnGroups groups = build_temporal_groups(in.V, in.gh, in.gw, cfg.window);
    attention_forward(in, W, cfg.q_heads, cfg.kv_heads, reps, false, groups, can, cache, stats);
  } else {
    const RepLayout layout = RepLayout::spatial(cfg.head_dim(), in.gh, in.gw);
    std::vector<RepMatrix<T>> reps(L);
    for (int loc = 0; loc < L; ++loc) reps[loc] = rep_matrix<T>(token_attr(in, loc), layout);
    AttnGroups groups = build_spatial_groups(in.V, L);
    attention_forward(in, W, cfg.q_heads, cfg.kv_heads, reps, true, groups, can, cache, stats);
  }
  return cache.c.y;
}

template <typename T>
MatX<T> swiglu(const MatX<T>& x, const MatX<T>& w_gate, const MatX<T>& w_up, const MatX<T>& w_down) {
  MatX<T> gpre = w_gate * x;
  MatX<T> act = gpre.unaryExpr([](T v) { return silu(v); }).cwiseProduct(w_up * x);
  return w_down * act;
}

double grad_check(const ParamStore<double>& params, const SceneInput<double>& in, const MatX<double>& velocity_target,
                  int coords_per_tensor, uint64_t seed) {
  auto mask = target_token_mask(in);
  ForwardCacheHandle<double> cache;
  MatX<double> vel = net_forward<double>(params, in, {.cache = cache.get()});
  MatX<double> dvel = flow_loss_grad(vel, velocity_target, mask);
  ParamStore<double> grads(params.cfg);
  net_backward<double>(params, in, *cache.get(), dvel, grads);

  ParamStore<double> p = params;
  auto loss_at = [&]() {
    MatX<double> v = net_forward<double>(p, in, {});
    return flow_loss(v, velocity_target, mask);
  };

  Rng rng(Rng::mix(seed, 0x67726164ull));
  const double h = 1e-5;
  double max_rel = 0.0;
  for (const auto& e : params.layout->entries) {
    if (e.size() == 0) continue;
    for (int s = 0; s < coords_per_tensor; ++s) {
      ptrdiff_t idx = e.offset + static_cast<ptrdiff_t>(rng.next_u64() % static_cast<uint64_t>(e.size()));
      double orig = p.data[idx];
      p.data[idx] = orig + h;
      double lp = loss_at();
      p.data[idx] = orig - h;
      double lm = loss_at();
      p.data[idx] = orig;
      double fd = (lp - lm) / (2.0 * h);
      double an = grads.data[idx];
      // Coordinates with gradients at the finite-difference noise floor
      // (~ eps * loss / 2h) cannot be resolved relatively; the 1e-6 floor
      // keeps them from reading as spurious error while still flagging any
      // wrong gradient of meaningful size.
      double rel = std::abs(fd - an) / std::max(1e-6, std::abs(fd) + std::abs(an));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

// explicit instantiations
template struct ParamStore<float>;
template struct ParamStore<double>;
template ParamStore<float> init_params<float>(const ModelConfig&, uint64_t);
template ParamStore<double> init_params<double>(const ModelConfig&, uint64_t);
template class ForwardCacheHandle<float>;
template class ForwardCacheHandle<double>;
template MatX<float> net_forward<float>(const ParamStore<float>&, const SceneInput<float>&,
                                        const ForwardExtras<float>&);
template MatX<double> net_forward<double>(const ParamStore<double>&, const SceneInput<double>&,
                                          const ForwardExtras<double>&);
template void net_backward<float>(const ParamStore<float>&, const SceneInput<float>&, const ForwardCache<float>&,
                                  const MatX<float>&, ParamStore<float>&);
template void net_backward<double>(const ParamStore<double>&, const SceneInput<double>&, const ForwardCache<double>&,
                                   const MatX<double>&, ParamStore<double>&);
template MatX<float> embed_head_path<float>(const ParamStore<float>&, const SceneInput<float>&);
template MatX<double> embed_head_path<double>(const ParamStore<double>&, const SceneInput<double>&);
template MatX<float> attention_block<float>(const ParamStore<float>&, int, bool, const SceneInput<float>&,
                                            const MatX<float>&, AttnStats*);
template MatX<double> attention_block<double>(const ParamStore<double>&, int, bool, const SceneInput<double>&,
                                              const MatX<double>&, AttnStats*);
template MatX<float> swiglu<float>(const MatX<float>&, const MatX<float>&, const MatX<float>&, const MatX<float>&);
template MatX<double> swiglu<double>(const MatX<double>&, const MatX<double>&, const MatX<double>&,
                                     const MatX<double>&);

}  // namespace kaleido
