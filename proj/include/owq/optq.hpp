// Copyright 2026 The owq-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OWQ_OPTQ_HPP_
#define OWQ_OPTQ_HPP_

#include <algorithm>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "owq/core.hpp"
#include "owq/hessian.hpp"
#include "owq/quantgrid.hpp"

namespace owq {

/// One column step of the engine, for tests that audit the compensation.
/// `before` and `after` hold every not-yet-quantized column (processing
/// positions position .. end, in processing order) with all pending lazy
/// updates applied.
template <typename Scalar>
struct StepTrace {
  Index position = 0;
  Index column = 0;
  const std::vector<Index>* order = nullptr;
  Matrix<Scalar> before;
  Matrix<Scalar> after;
};

template <typename Scalar>
struct OptqOptions {
  int bits = 3;
  Index block_size = 128;
  bool act_order = false;
  Index group_size = 0;  // 0 = one grid per output row
  GridOptions grid{};
  std::vector<Index> skip_columns;  // sorted ascending, never quantized
  bool compensate_weak = true;      // skipped columns absorb compensation
  bool store_f16_params = true;     // snap grids to binary16 as stored
  std::function<void(const StepTrace<Scalar>&)> observer;
};

template <typename Scalar>
struct OptqResult {
  Index c_out = 0;
  Index c_in = 0;
  Index group_size = 0;
  Index n_groups = 1;
  CodeMatrix q_codes;                        // kSkippedCode in skipped columns
  std::vector<QuantParams<Scalar>> params;   // row-major [c_out][n_groups]
  std::vector<Index> skip_columns;
  Matrix<Scalar> updated_skip_values;        // c_out x k
  Scalar layer_error_proxy = 0;
  std::vector<Index> order;                  // processing order of columns

  const QuantParams<Scalar>& grid(Index row, Index col) const {
    const Index g = group_size == 0 ? 0 : col / group_size;
    return params[static_cast<std::size_t>(row * n_groups + g)];
  }

  /// Dense reconstruction: grid values for quantized columns, final values for skipped ones.
  Matrix<Scalar> dequantized() const {
    Matrix<Scalar> out(c_out, c_in);
    for (Index i = 0; i < c_out; ++i) {
      for (Index j = 0; j < c_in; ++j) {
        const auto c = q_codes(i, j);
        out(i, j) = c == kSkippedCode ? Scalar(0) : grid(i, j).dequantize(c);
      }
    }
    for (std::size_t s = 0; s < skip_columns.size(); ++s) {
      out.col(skip_columns[s]) = updated_skip_values.col(static_cast<Index>(s));
    }
    return out;
  }
};

/// w_remaining -= err_col * hinv_row (rank-one update), in place.
template <typename DW, typename DE, typename DR>
void apply_compensation(const Eigen::MatrixBase<DW>& w_remaining, const Eigen::MatrixBase<DE>& err_col,
                        const Eigen::MatrixBase<DR>& hinv_row) {
  auto& w = const_cast<Eigen::MatrixBase<DW>&>(w_remaining);
  if (w.rows() != err_col.size() || w.cols() != hinv_row.size()) {
    throw Error("compensation_step: shape mismatch");
  }
  w.noalias() -= err_col.derived().reshaped(err_col.size(), 1) * hinv_row.derived().reshaped(1, hinv_row.size());
}

template <typename Scalar>
Matrix<Scalar> compensation_step(Matrix<Scalar> w_remaining, const Vector<Scalar>& err_col,
                                 const Vector<Scalar>& hinv_row) {
  apply_compensation(w_remaining, err_col, hinv_row);
  return w_remaining;
}

/// Columns by descending Hessian diagonal; ties keep ascending index.
template <typename Scalar>
std::vector<Index> act_order_permutation(const HessianState<Scalar>& hstate) {
  std::vector<Index> perm(static_cast<std::size_t>(hstate.c_in()));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::stable_sort(perm.begin(), perm.end(), [&](Index a, Index b) { return hstate.h(a, a) > hstate.h(b, b); });
  return perm;
}

namespace detail {

inline void check_skip(const std::vector<Index>& skip, Index c_in) {
  for (std::size_t s = 0; s < skip.size(); ++s) {
    if (skip[s] < 0 || skip[s] >= c_in) throw Error("skip column out of range");
    if (s > 0 && skip[s] <= skip[s - 1]) throw Error("skip columns must be strictly increasing");
  }
}

inline void check_groups(Index group_size, Index c_in) {
  if (group_size < 0 || (group_size > 0 && c_in % group_size != 0)) {
    throw Error("group_size must be 0 or divide c_in");
  }
}

inline std::vector<char> skip_mask(const std::vector<Index>& skip, Index c_in) {
  std::vector<char> mask(static_cast<std::size_t>(c_in), 0);
  for (Index s : skip) mask[static_cast<std::size_t>(s)] = 1;
  return mask;
}

template <typename Scalar>
QuantParams<Scalar> fit_or_default(const Vector<Scalar>& values, int bits, const GridOptions& grid, bool snap) {
  auto p = values.size() == 0 ? make_params(Scalar(0), Scalar(0), bits) : fit_grid(values, bits, grid);
  return snap ? snap_f16(p) : p;
}

/// Non-skipped entries of row `row` restricted to columns [lo, hi).
template <typename Scalar, typename ValueAt>
Vector<Scalar> gather_row(Index lo, Index hi, const std::vector<char>& skipped, ValueAt&& value_at) {
  std::vector<Scalar> v;
  v.reserve(static_cast<std::size_t>(hi - lo));
  for (Index j = lo; j < hi; ++j) {
    if (!skipped[static_cast<std::size_t>(j)]) v.push_back(value_at(j));
  }
  return Eigen::Map<Vector<Scalar>>(v.data(), static_cast<Index>(v.size()));
}

}  // namespace detail

/// Column-sequential quantization with inverse-Hessian error feedback.
///
/// Columns are visited in natural order (or act order); skipped columns are
/// moved behind every quantized column so that, with compensate_weak, they
/// absorb the compensation of all of them. Without compensate_weak the
/// skipped columns are frozen, which is modelled by dropping them from the
/// Hessian before factorization.
///
/// `hstate` must already be dampened.
template <typename Scalar, typename Derived>
OptqResult<Scalar> quantize_layer(const Eigen::MatrixBase<Derived>& w_in, const HessianState<Scalar>& hstate,
                                  const OptqOptions<Scalar>& opts) {
  check_bits(opts.bits);
  const Index c_out = w_in.rows();
  const Index c_in = w_in.cols();
  if (hstate.c_in() != c_in) throw Error("quantize_layer: weight/Hessian shape mismatch");
  if (opts.block_size <= 0) throw Error("quantize_layer: block_size must be positive");
  detail::check_groups(opts.group_size, c_in);
  detail::check_skip(opts.skip_columns, c_in);
  const Matrix<Scalar> w = w_in.template cast<Scalar>();
  const auto skipped = detail::skip_mask(opts.skip_columns, c_in);

  std::vector<Index> base(static_cast<std::size_t>(c_in));
  if (opts.act_order) {
    base = act_order_permutation(hstate);
  } else {
    std::iota(base.begin(), base.end(), Index{0});
  }
  std::vector<Index> order;
  for (Index j : base) {
    if (!skipped[static_cast<std::size_t>(j)]) order.push_back(j);
  }
  const Index n_quant = static_cast<Index>(order.size());
  if (opts.compensate_weak) order.insert(order.end(), opts.skip_columns.begin(), opts.skip_columns.end());
  const Index m = static_cast<Index>(order.size());

  std::vector<Index> pos_of(static_cast<std::size_t>(c_in), -1);
  for (Index p = 0; p < m; ++p) pos_of[static_cast<std::size_t>(order[p])] = p;

  Matrix<Scalar> hp(m, m);
  Matrix<Scalar> wp(c_out, m);
  for (Index a = 0; a < m; ++a) {
    wp.col(a) = w.col(order[a]);
    for (Index b = 0; b < m; ++b) hp(a, b) = hstate.h(order[a], order[b]);
  }
  const Matrix<Scalar> u = m > 0 ? cholesky_inverse<Scalar>(hp).u : Matrix<Scalar>();

  OptqResult<Scalar> res;
  res.c_out = c_out;
  res.c_in = c_in;
  res.group_size = opts.group_size;
  res.n_groups = opts.group_size == 0 ? 1 : c_in / opts.group_size;
  res.q_codes = CodeMatrix::Constant(c_out, c_in, kSkippedCode);
  res.params.resize(static_cast<std::size_t>(c_out * res.n_groups));
  res.skip_columns = opts.skip_columns;
  res.order = order;

  std::vector<char> group_ready(static_cast<std::size_t>(res.n_groups), 0);
  if (opts.group_size == 0) {
    for (Index i = 0; i < c_out; ++i) {
      const auto vals = detail::gather_row<Scalar>(0, c_in, skipped, [&](Index j) { return w(i, j); });
      res.params[static_cast<std::size_t>(i)] =
          detail::fit_or_default<Scalar>(vals, opts.bits, opts.grid, opts.store_f16_params);
    }
  }

  Matrix<Scalar> err_block;
  // Current value of w(i, col) given `pending` columns of err_block starting at block_start.
  auto current = [&](Index i, Index col, Index block_start, Index block_end, Index pending) -> Scalar {
    const Index p = pos_of[static_cast<std::size_t>(col)];
    Scalar v = wp(i, p);
    if (p >= block_end && pending > 0) {
      v -= err_block.row(i).head(pending).dot(u.col(p).segment(block_start, pending));
    }
    return v;
  };
  auto snapshot = [&](Index from, Index block_start, Index block_end, Index pending) {
    Matrix<Scalar> s(c_out, m - from);
    for (Index i = 0; i < c_out; ++i) {
      for (Index p = from; p < m; ++p) s(i, p - from) = current(i, order[p], block_start, block_end, pending);
    }
    return s;
  };

  Scalar proxy = 0;
  for (Index b = 0; b < n_quant; b += opts.block_size) {
    const Index e = std::min(b + opts.block_size, n_quant);
    err_block.setZero(c_out, e - b);
    for (Index p = b; p < e; ++p) {
      const Index col = order[p];
      if (opts.group_size > 0) {
        const Index g = col / opts.group_size;
        if (!group_ready[static_cast<std::size_t>(g)]) {
          const Index lo = g * opts.group_size;
          for (Index i = 0; i < c_out; ++i) {
            const auto vals = detail::gather_row<Scalar>(lo, lo + opts.group_size, skipped,
                                                         [&](Index j) { return current(i, j, b, e, p - b); });
            res.params[static_cast<std::size_t>(i * res.n_groups + g)] =
                detail::fit_or_default<Scalar>(vals, opts.bits, opts.grid, opts.store_f16_params);
          }
          group_ready[static_cast<std::size_t>(g)] = 1;
        }
      }
      std::optional<StepTrace<Scalar>> trace;
      if (opts.observer) {
        trace.emplace();
        trace->position = p;
        trace->column = col;
        trace->order = &res.order;
        trace->before = snapshot(p, b, e, p - b);
      }

      const Scalar d = u(p, p);
      for (Index i = 0; i < c_out; ++i) {
        const auto& grid = res.grid(i, col);
        const Scalar v = wp(i, p);
        const std::int32_t code = grid.quantize(v);
        const Scalar q = grid.dequantize(code);
        res.q_codes(i, col) = code;
        err_block(i, p - b) = (v - q) / d;
        wp(i, p) = q;
        proxy += (v - q) * (v - q) / (d * d);
      }
      apply_compensation(wp.block(0, p + 1, c_out, e - p - 1), err_block.col(p - b),
                         u.row(p).segment(p + 1, e - p - 1));

      if (trace) {
        trace->after = snapshot(p, b, e, p - b + 1);
        opts.observer(*trace);
      }
    }
    if (e < m) {
      wp.rightCols(m - e).noalias() -= err_block * u.block(b, e, e - b, m - e);
    }
  }
  res.layer_error_proxy = proxy;

  const Index k = static_cast<Index>(opts.skip_columns.size());
  res.updated_skip_values.resize(c_out, k);
  for (Index s = 0; s < k; ++s) {
    const Index col = opts.skip_columns[static_cast<std::size_t>(s)];
    res.updated_skip_values.col(s) = opts.compensate_weak ? Vector<Scalar>(wp.col(pos_of[static_cast<std::size_t>(col)])) : Vector<Scalar>(w.col(col));
  }
  return res;
}

/// Round-to-nearest baseline: per-row (or per-group) grids on the original
/// weights, no error feedback. Skipped columns keep their original values.
template <typename Scalar, typename Derived>
OptqResult<Scalar> rtn_layer(const Eigen::MatrixBase<Derived>& w_in, const OptqOptions<Scalar>& opts) {
  check_bits(opts.bits);
  const Index c_out = w_in.rows();
  const Index c_in = w_in.cols();
  detail::check_groups(opts.group_size, c_in);
  detail::check_skip(opts.skip_columns, c_in);
  const Matrix<Scalar> w = w_in.template cast<Scalar>();
  const auto skipped = detail::skip_mask(opts.skip_columns, c_in);

  OptqResult<Scalar> res;
  res.c_out = c_out;
  res.c_in = c_in;
  res.group_size = opts.group_size;
  res.n_groups = opts.group_size == 0 ? 1 : c_in / opts.group_size;
  res.q_codes = CodeMatrix::Constant(c_out, c_in, kSkippedCode);
  res.params.resize(static_cast<std::size_t>(c_out * res.n_groups));
  res.skip_columns = opts.skip_columns;
  const Index width = opts.group_size == 0 ? c_in : opts.group_size;
  for (Index i = 0; i < c_out; ++i) {
    for (Index g = 0; g < res.n_groups; ++g) {
      const auto vals = detail::gather_row<Scalar>(g * width, (g + 1) * width, skipped, [&](Index j) { return w(i, j); });
      res.params[static_cast<std::size_t>(i * res.n_groups + g)] =
          detail::fit_or_default<Scalar>(vals, opts.bits, opts.grid, opts.store_f16_params);
    }
    for (Index j = 0; j < c_in; ++j) {
      if (!skipped[static_cast<std::size_t>(j)]) res.q_codes(i, j) = res.grid(i, j).quantize(w(i, j));
    }
  }
  res.updated_skip_values.resize(c_out, static_cast<Index>(opts.skip_columns.size()));
  for (std::size_t s = 0; s < opts.skip_columns.size(); ++s) {
    res.updated_skip_values.col(static_cast<Index>(s)) = w.col(opts.skip_columns[s]);
  }
  return res;
}

}  // namespace owq

#endif  // OWQ_OPTQ_HPP_
