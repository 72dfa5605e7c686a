// Copyright 2026 The owq-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "owq/gemm.hpp"

namespace owq {

MatrixF dense_matmul(const MatrixF& a, const MatrixF& b) {
  if (a.cols() != b.rows()) throw Error("dense_matmul: inner dimension mismatch");
  MatrixF c = MatrixF::Zero(a.rows(), b.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index p = 0; p < a.cols(); ++p) {
      const float aip = a(i, p);
      for (Index j = 0; j < b.cols(); ++j) c(i, j) += aip * b(p, j);
    }
  }
  return c;
}

MatrixF mixed_forward(const QuantizedLayer& layer, const MatrixF& x) {
  if (x.rows() != layer.c_in) throw Error("mixed_forward: shape mismatch");
  const Index k = layer.k();

  // Zero-filled weak columns contribute nothing: mask their input channels.
  MatrixF x_low = x;
  MatrixF x_weak(k, x.cols());
  for (Index s = 0; s < k; ++s) {
    const Index ch = layer.weak_indices[static_cast<std::size_t>(s)];
    x_weak.row(s) = x.row(ch);
    x_low.row(ch).setZero();
  }

  const CodeMatrix codes = layer.codes();
  MatrixF y(layer.c_out, x.cols());
  RowVector<float> w_row(layer.c_in);
  for (Index i = 0; i < layer.c_out; ++i) {
    for (Index j = 0; j < layer.c_in; ++j) w_row[j] = layer.grid(i, j).dequantize(codes(i, j));
    y.row(i).noalias() = w_row * x_low;
  }
  if (k > 0) y.noalias() += layer.weak_matrix() * x_weak;
  return y;
}

double layer_output_error(const MatrixF& w_ref, const QuantizedLayer& layer, const MatrixF& x) {
  if (w_ref.rows() != layer.c_out || w_ref.cols() != layer.c_in) throw Error("layer_output_error: shape mismatch");
  const MatrixF diff = dense_matmul(w_ref, x) - mixed_forward(layer, x);
  return diff.cast<double>().squaredNorm();
}

}  // namespace owq
