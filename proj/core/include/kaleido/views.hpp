// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "kaleido/rng.hpp"

namespace kaleido {

enum class ViewRole : uint8_t { Reference, Target };

// Role and visibility assignment for the V views of one scene. Hidden views
// are excluded from cross-view attention for every other view and contribute
// nothing to the loss, which makes masking a view equivalent to deleting it.
struct ViewSplit {
  std::vector<ViewRole> roles;
  std::vector<uint8_t> visible;

  int num_views() const { return static_cast<int>(roles.size()); }
  int count(ViewRole r, bool visible_only = false) const;
};

// Number of reference views for a V-view scene, drawn from the truncated
// geometric law P(N = n) proportional to 2^-n on [1, V-1], so each additional
// reference view is half as likely as the previous count.
int sample_num_refs(int num_views, Rng& rng);

// Uniformly random subset of size num_refs marked Reference, rest Target.
ViewSplit partition(int num_views, int num_refs, Rng& rng);

// Random attention masking: keeps n' ~ U[1, N] references and m' ~ U[1, M]
// targets visible; the hidden views drop out of attention and loss for this
// step. Together with the exponential reference sampler this exposes every
// (n', m') pair with n' + m' in [2, V] during training.
void random_mask(ViewSplit& split, Rng& rng);

// Hides every reference view (the unconditional branch used for
// classifier-free guidance).
void mask_all_references(ViewSplit& split);

// May view `qv` attend to view `kv` in cross-view attention?  References see
// only visible references; targets see visible references and visible
// targets; every view always sees itself.
bool view_can_attend(const ViewSplit& split, int qv, int kv);

}  // namespace kaleido
