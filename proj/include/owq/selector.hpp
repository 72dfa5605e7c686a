// Copyright 2026 The owq-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OWQ_SELECTOR_HPP_
#define OWQ_SELECTOR_HPP_

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "owq/core.hpp"
#include "owq/hessian.hpp"
#include "owq/quantgrid.hpp"

namespace owq {

/// Weak-column indices are stored as u16.
inline constexpr Index kMaxIndexableColumns = 65536;

inline void check_index_width(Index c_in) {
  if (c_in > kMaxIndexableColumns) {
    throw Error("layer too wide for u16 column indices (c_in > 65536)");
  }
}

/// Per-column sensitivity lambda_j * ||dW_:,j||^2, where lambda_j is the
/// Hessian diagonal and dW the round-to-nearest error at the target width.
template <typename Scalar>
struct SensitivityReport {
  Vector<Scalar> lambda_diag;
  Vector<Scalar> delta_norms;
  Vector<Scalar> sensitivity;
  std::vector<char> dead;       // columns with no calibration signal
  std::vector<Index> selected;  // ascending

  Index c_in() const { return lambda_diag.size(); }
};

/// Uses the Hessian diagonal as accumulated (call before dampening).
template <typename Scalar, typename Derived>
SensitivityReport<Scalar> column_sensitivities(const Eigen::MatrixBase<Derived>& w_in,
                                               const HessianState<Scalar>& hstate, int bits,
                                               const GridOptions& grid = {}) {
  check_bits(bits);
  const Index c_out = w_in.rows();
  const Index c_in = w_in.cols();
  if (hstate.c_in() != c_in) throw Error("column_sensitivities: shape mismatch");
  const Matrix<Scalar> w = w_in.template cast<Scalar>();

  SensitivityReport<Scalar> r;
  r.lambda_diag = hstate.h.diagonal();
  r.delta_norms = Vector<Scalar>::Zero(c_in);
  r.dead.assign(static_cast<std::size_t>(c_in), 0);
  for (Index i = 0; i < c_out; ++i) {
    const auto p = fit_grid(w.row(i), bits, grid);
    for (Index j = 0; j < c_in; ++j) {
      const Scalar d = w(i, j) - p.round_trip(w(i, j));
      r.delta_norms[j] += d * d;
    }
  }
  r.sensitivity.resize(c_in);
  for (Index j = 0; j < c_in; ++j) {
    const bool dead = r.lambda_diag[j] == Scalar(0) || hstate.is_dead(j);
    r.dead[static_cast<std::size_t>(j)] = dead ? 1 : 0;
    r.sensitivity[j] = dead ? Scalar(0) : r.lambda_diag[j] * r.delta_norms[j];
  }
  return r;
}

/// The k most sensitive columns, ascending. Ties go to the lower index and
/// dead columns rank after every live one.
template <typename Scalar>
std::vector<Index> select_weak_columns(const SensitivityReport<Scalar>& report, Index k) {
  const Index n = report.c_in();
  if (k < 0 || k > n) throw Error("select_weak_columns: k exceeds c_in");
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  auto rank_before = [&](Index a, Index b) {
    const bool da = !report.dead.empty() && report.dead[static_cast<std::size_t>(a)];
    const bool db = !report.dead.empty() && report.dead[static_cast<std::size_t>(b)];
    if (da != db) return db;
    return report.sensitivity[a] > report.sensitivity[b];
  };
  std::stable_sort(idx.begin(), idx.end(), rank_before);
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

// ---------------------------------------------------------------------------
// Extra-bit budgeting

enum class AccountingMode {
  latency_favored,  // full-width low-bit matrix with zero-filled weak columns
  storage_favored,  // weak columns dropped from the low-bit matrix
};

std::string_view to_string(AccountingMode m);
AccountingMode accounting_mode_from_string(std::string_view s);

struct LayerDims {
  Index c_out = 0;
  Index c_in = 0;

  double numel() const { return static_cast<double>(c_out) * static_cast<double>(c_in); }
};

struct BudgetPlan {
  double extra_bits = 0.0;
  int bits = 0;
  AccountingMode accounting_mode = AccountingMode::latency_favored;
  std::vector<LayerDims> layer_dims;
  std::vector<Index> k_per_layer;
  std::vector<double> budget_bits_per_layer;
  double total_budget_bits = 0.0;

  /// Extra bits actually spent, summed over layers.
  double spent_bits() const;
  /// Parameter-weighted effective bit-width of the planned block.
  double average_bits() const;
};

/// Storage cost in bits of keeping one column of a c_out-row layer in fp16
/// together with its u16 index.
double weak_column_cost_bits(const LayerDims& dims, int bits, AccountingMode mode);

/// Spreads extra_bits * (total weights) over the layers (uniformly, or in
/// proportion to layer_weights) and floors each share to whole columns.
BudgetPlan budget_to_k(double extra_bits, std::span<const LayerDims> layer_dims, int bits, AccountingMode mode,
                       std::span<const double> layer_weights = {});

/// Average stored bits per weight of one layer holding k weak columns.
double effective_bits(const LayerDims& dims, int bits, Index k, AccountingMode mode);

/// Parameter-weighted effective bit-width over several layers.
double average_effective_bits(std::span<const LayerDims> dims, int bits, std::span<const Index> k,
                              AccountingMode mode);

}  // namespace owq

#endif  // OWQ_SELECTOR_HPP_
