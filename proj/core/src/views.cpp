// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#include "kaleido/views.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace kaleido {

int ViewSplit::count(ViewRole r, bool visible_only) const {
  int n = 0;
  for (size_t i = 0; i < roles.size(); ++i)
    if (roles[i] == r && (!visible_only || visible[i])) ++n;
  return n;
}

int sample_num_refs(int num_views, Rng& rng) {
  if (num_views < 2) throw std::invalid_argument("sample_num_refs: need at least 2 views");
  const int hi = num_views - 1;
  // P(N = n) = 2^-n / (1 - 2^-hi) for n in [1, hi]; inverse-CDF draw.
  double norm = 1.0 - std::ldexp(1.0, -hi);
  double u = rng.uniform() * norm;
  double cdf = 0.0;
  for (int n = 1; n < hi; ++n) {
    cdf += std::ldexp(1.0, -n);
    if (u < cdf) return n;
  }
  return hi;
}

ViewSplit partition(int num_views, int num_refs, Rng& rng) {
  if (num_refs < 1 || num_refs > num_views - 1) throw std::invalid_argument("partition: num_refs out of range");
  std::vector<int> order(num_views);
  std::iota(order.begin(), order.end(), 0);
  // Fisher-Yates; the first num_refs slots become references.
  for (int i = num_views - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
  ViewSplit split;
  split.roles.assign(num_views, ViewRole::Target);
  split.visible.assign(num_views, 1);
  for (int i = 0; i < num_refs; ++i) split.roles[order[i]] = ViewRole::Reference;
  return split;
}

void random_mask(ViewSplit& split, Rng& rng) {
  const int n_ref = split.count(ViewRole::Reference);
  const int n_tgt = split.count(ViewRole::Target);
  if (n_tgt < 1) throw std::invalid_argument("random_mask: batch has no target views");
  int keep_ref = n_ref >= 1 ? rng.uniform_int(1, n_ref) : 0;
  int keep_tgt = rng.uniform_int(1, n_tgt);

  auto hide_extra = [&](ViewRole role, int keep, int total) {
    int hide = total - keep;
    if (hide <= 0) return;
    std::vector<int> idx;
    for (size_t i = 0; i < split.roles.size(); ++i)
      if (split.roles[i] == role) idx.push_back(static_cast<int>(i));
    for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i) std::swap(idx[i], idx[rng.uniform_int(0, i)]);
    for (int i = 0; i < hide; ++i) split.visible[idx[i]] = 0;
  };
  hide_extra(ViewRole::Reference, keep_ref, n_ref);
  hide_extra(ViewRole::Target, keep_tgt, n_tgt);
}

void mask_all_references(ViewSplit& split) {
  for (size_t i = 0; i < split.roles.size(); ++i)
    if (split.roles[i] == ViewRole::Reference) split.visible[i] = 0;
}

bool view_can_attend(const ViewSplit& split, int qv, int kv) {
  if (qv == kv) return true;
  if (!split.visible[kv]) return false;
  if (split.roles[qv] == ViewRole::Reference) return split.roles[kv] == ViewRole::Reference;
  return true;
}

}  // namespace kaleido
