// Copyright 2026 The owq-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OWQ_GEMM_HPP_
#define OWQ_GEMM_HPP_

#include "owq/core.hpp"
#include "owq/packed.hpp"

namespace owq {

/// Naive triple loop with f32 accumulation; the oracle for every other path.
MatrixF dense_matmul(const MatrixF& a, const MatrixF& b);

/// Mixed-precision forward: low-bit codes are expanded one row at a time with
/// weak channels of x masked to zero, then the fp16 weak columns are applied
/// to the gathered weak channels of x.
MatrixF mixed_forward(const QuantizedLayer& layer, const MatrixF& x);

/// ||w_ref x - mixed_forward(layer, x)||_F^2, accumulated in double.
double layer_output_error(const MatrixF& w_ref, const QuantizedLayer& layer, const MatrixF& x);

}  // namespace owq

#endif  // OWQ_GEMM_HPP_
