// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <set>
#include <stdexcept>

#include "kaleido/views.hpp"

using namespace kaleido;

TEST_CASE("sample_num_refs halves in probability per extra reference") {
  Rng rng(404);
  const int V = 12, draws = 100000;
  std::vector<int> counts(V, 0);
  for (int i = 0; i < draws; ++i) counts[sample_num_refs(V, rng)]++;
  for (int n = 1; n + 1 <= 9; ++n) {
    double ratio = static_cast<double>(counts[n + 1]) / counts[n];
    CHECK(ratio > 0.40);
    CHECK(ratio < 0.60);
  }
  // Closed-form head of the truncated geometric: P(N=1) = 2^-1 / (1 - 2^-11).
  double p1 = static_cast<double>(counts[1]) / draws;
  CHECK(p1 == doctest::Approx(0.5 / (1.0 - std::ldexp(1.0, -11))).epsilon(0.02));
}

TEST_CASE("sample_num_refs with V=2 always returns 1") {
  Rng rng(5);
  for (int i = 0; i < 100; ++i) CHECK(sample_num_refs(2, rng) == 1);
  CHECK_THROWS_AS(sample_num_refs(1, rng), std::invalid_argument);
}

TEST_CASE("partition marks a uniformly random subset") {
  Rng rng(17);
  const int V = 6, N = 2, draws = 20000;
  std::vector<int> ref_count(V, 0);
  for (int i = 0; i < draws; ++i) {
    ViewSplit s = partition(V, N, rng);
    CHECK(s.count(ViewRole::Reference) == N);
    CHECK(s.count(ViewRole::Target) == V - N);
    for (int v = 0; v < V; ++v) ref_count[v] += s.roles[v] == ViewRole::Reference ? 1 : 0;
  }
  for (int v = 0; v < V; ++v) {
    double freq = static_cast<double>(ref_count[v]) / draws;
    CHECK(freq == doctest::Approx(static_cast<double>(N) / V).epsilon(0.06));
  }
  CHECK_THROWS_AS(partition(6, 0, rng), std::invalid_argument);
  CHECK_THROWS_AS(partition(6, 6, rng), std::invalid_argument);
}

TEST_CASE("partition is reproducible for a fixed seed") {
  Rng a(1234), b(1234);
  ViewSplit sa = partition(8, 3, a), sb = partition(8, 3, b);
  CHECK(sa.roles == sb.roles);
}

TEST_CASE("random_mask keeps counts in range and keeps at least one of each") {
  Rng rng(31);
  for (int i = 0; i < 2000; ++i) {
    ViewSplit s = partition(9, 4, rng);
    random_mask(s, rng);
    int vis_ref = s.count(ViewRole::Reference, true);
    int vis_tgt = s.count(ViewRole::Target, true);
    CHECK(vis_ref >= 1);
    CHECK(vis_ref <= 4);
    CHECK(vis_tgt >= 1);
    CHECK(vis_tgt <= 5);
  }
}

TEST_CASE("full-keep mask leaves the batch untouched") {
  Rng rng(3);
  int full = 0;
  for (int i = 0; i < 4000; ++i) {
    ViewSplit s = partition(4, 2, rng);
    random_mask(s, rng);
    if (s.count(ViewRole::Reference, true) == 2 && s.count(ViewRole::Target, true) == 2) {
      for (auto v : s.visible) CHECK(v == 1);
      ++full;
    }
  }
  CHECK(full > 0);  // the (n'=N, m'=M) case occurs and hides nothing
}

TEST_CASE("visibility rules: refs see refs, targets see refs and targets") {
  ViewSplit s;
  s.roles = {ViewRole::Reference, ViewRole::Reference, ViewRole::Target, ViewRole::Target};
  s.visible = {1, 0, 1, 1};
  // Everyone sees itself.
  for (int v = 0; v < 4; ++v) CHECK(view_can_attend(s, v, v));
  // Hidden views are invisible to everyone else.
  CHECK(!view_can_attend(s, 0, 1));
  CHECK(!view_can_attend(s, 2, 1));
  // References never attend to targets.
  CHECK(!view_can_attend(s, 0, 2));
  CHECK(!view_can_attend(s, 0, 3));
  // Targets see visible references and targets.
  CHECK(view_can_attend(s, 2, 0));
  CHECK(view_can_attend(s, 2, 3));

  mask_all_references(s);
  CHECK(!view_can_attend(s, 2, 0));
  CHECK(view_can_attend(s, 2, 3));
}

TEST_CASE("masked targets contribute no loss support") {
  Rng rng(8);
  ViewSplit s = partition(6, 2, rng);
  random_mask(s, rng);
  for (size_t v = 0; v < s.roles.size(); ++v)
    if (!s.visible[v]) CHECK((s.roles[v] == ViewRole::Target || s.roles[v] == ViewRole::Reference));
}

TEST_CASE("every (n', m') combination appears over a long run") {
  // With V=12, the rarest pairs need N = 11 (probability ~2^-11), so full
  // coverage at 1e4 draws holds only for lucky seeds; 1e5 draws make it
  // robust for this fixed stream.
  Rng rng(2024);
  const int V = 12;
  std::set<std::pair<int, int>> seen;
  for (int i = 0; i < 100000; ++i) {
    int n = sample_num_refs(V, rng);
    ViewSplit s = partition(V, n, rng);
    random_mask(s, rng);
    seen.insert({s.count(ViewRole::Reference, true), s.count(ViewRole::Target, true)});
  }
  int expected = 0;
  for (int n = 1; n <= V - 1; ++n)
    for (int m = 1; m + n <= V; ++m) ++expected;
  CHECK(static_cast<int>(seen.size()) == expected);  // all 66 pairs with n+m in [2, 12]
}
