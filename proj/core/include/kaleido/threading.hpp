// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace kaleido {

// Sets the worker count used by Eigen and the OpenMP loops in this library.
// n <= 0 selects the hardware concurrency. Results are bit-reproducible for a
// fixed thread count; changing it may reorder float reductions inside GEMM.
void set_num_threads(int n);
int num_threads();

}  // namespace kaleido
