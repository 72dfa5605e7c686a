// Copyright 2026 The owq-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OWQ_HESSIAN_HPP_
#define OWQ_HESSIAN_HPP_

#include <vector>

#include "owq/core.hpp"

namespace owq {

/// Layer Hessian H = 2 X X^T, summed over every calibration batch seen. The
/// same matrix serves every output row of the layer.
template <typename Scalar>
struct HessianState {
  Matrix<Scalar> h;
  std::int64_t n_samples = 0;
  Scalar damp_applied = 0;
  std::vector<Index> dead_columns;

  HessianState() = default;
  explicit HessianState(Index c_in) : h(Matrix<Scalar>::Zero(c_in, c_in)) {}

  Index c_in() const { return h.rows(); }
  bool is_dead(Index j) const {
    for (Index d : dead_columns) {
      if (d == j) return true;
    }
    return false;
  }
};

/// Upper-triangular U with U^T U = H^-1.
template <typename Scalar>
struct UpperFactor {
  Matrix<Scalar> u;
};

/// h += 2 x x^T for a c_in x n batch.
template <typename Scalar, typename Derived>
HessianState<Scalar>& accumulate(HessianState<Scalar>& state, const Eigen::MatrixBase<Derived>& x_batch) {
  if (x_batch.rows() != state.c_in()) throw Error("hessian accumulate: shape mismatch");
  const Matrix<Scalar> x = x_batch.template cast<Scalar>();
  state.h.noalias() += Scalar(2) * x * x.transpose();
  state.n_samples += x.cols();
  return state;
}

/// Adds percdamp * mean(diag(h)) to every diagonal entry and records columns
/// whose diagonal was exactly zero beforehand.
template <typename Scalar>
HessianState<Scalar>& dampen(HessianState<Scalar>& state, Scalar percdamp) {
  if (!(percdamp > Scalar(0))) throw Error("percdamp must be positive");
  const Index n = state.c_in();
  if (n == 0 || state.h.diagonal().maxCoeff() <= Scalar(0)) {
    throw Error("all-zero Hessian (no calibration data)");
  }
  state.dead_columns.clear();
  for (Index j = 0; j < n; ++j) {
    if (state.h(j, j) == Scalar(0)) state.dead_columns.push_back(j);
  }
  const Scalar damp = percdamp * state.h.diagonal().mean();
  state.h.diagonal().array() += damp;
  state.damp_applied += damp;
  return state;
}

/// Upper Cholesky factor of the inverse of a positive-definite matrix.
template <typename Scalar, typename Derived>
UpperFactor<Scalar> cholesky_inverse(const Eigen::MatrixBase<Derived>& h) {
  using Dense = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Dense hd = h.template cast<Scalar>();
  Eigen::LLT<Dense> llt(hd);
  if (llt.info() != Eigen::Success) throw Error("cholesky factorization failed: Hessian not positive definite");
  Dense hinv = llt.solve(Dense::Identity(hd.rows(), hd.cols()));
  hinv = (hinv + hinv.transpose()).eval() * Scalar(0.5);
  Eigen::LLT<Dense> llt_inv(hinv);
  if (llt_inv.info() != Eigen::Success) throw Error("cholesky factorization failed: inverse not positive definite");
  return {Matrix<Scalar>(llt_inv.matrixU())};
}

template <typename Scalar>
UpperFactor<Scalar> cholesky_inverse(const HessianState<Scalar>& state) {
  return cholesky_inverse<Scalar>(state.h);
}

}  // namespace owq

#endif  // OWQ_HESSIAN_HPP_
