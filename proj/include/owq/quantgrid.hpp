// Copyright 2026 The owq-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OWQ_QUANTGRID_HPP_
#define OWQ_QUANTGRID_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "owq/core.hpp"
#include "owq/f16.hpp"

namespace owq {

inline constexpr int kMinBits = 2;
inline constexpr int kMaxBits = 8;

/// Asymmetric linear grid: code c in [0, 2^bits - 1] represents clip_lo + step * c.
template <typename Scalar>
struct QuantParams {
  int bits = 0;
  Scalar step = 1;
  std::int32_t zero_point = 0;
  Scalar clip_lo = 0;
  Scalar clip_hi = 0;

  std::int32_t max_code() const { return (std::int32_t{1} << bits) - 1; }

  std::int32_t quantize(Scalar v) const {
    const Scalar c = std::round((v - clip_lo) / step);
    if (!(c > Scalar(0))) return 0;
    return c >= Scalar(max_code()) ? max_code() : static_cast<std::int32_t>(c);
  }

  Scalar dequantize(std::int32_t code) const { return clip_lo + step * static_cast<Scalar>(code); }

  Scalar round_trip(Scalar v) const { return dequantize(quantize(v)); }
};

inline void check_bits(int bits) {
  if (bits < kMinBits || bits > kMaxBits) throw Error("bits must be in [2, 8]");
}

/// Grid spanning [lo, hi]. A zero-width range keeps lo exactly with unit step.
template <typename Scalar>
QuantParams<Scalar> make_params(Scalar lo, Scalar hi, int bits) {
  QuantParams<Scalar> p;
  p.bits = bits;
  p.clip_lo = lo;
  const Scalar levels = static_cast<Scalar>(p.max_code());
  if (hi > lo) {
    p.step = (hi - lo) / levels;
    p.clip_hi = hi;
  } else {
    p.step = Scalar(1);
    p.clip_hi = lo + levels;
  }
  const Scalar z = std::round(-lo / p.step);
  p.zero_point = static_cast<std::int32_t>(std::clamp(z, Scalar(0), levels));
  return p;
}

/// Replaces step and clip_lo by their nearest binary16 values, as stored in a
/// packed layer, so in-memory reconstruction matches the serialized one.
template <typename Scalar>
QuantParams<Scalar> snap_f16(const QuantParams<Scalar>& p) {
  Scalar step = static_cast<Scalar>(round_f16(static_cast<float>(p.step)));
  if (!(step > Scalar(0))) step = static_cast<Scalar>(f16_to_float(0x0001));  // smallest subnormal
  QuantParams<Scalar> out = p;
  out.step = step;
  out.clip_lo = static_cast<Scalar>(round_f16(static_cast<float>(p.clip_lo)));
  out.clip_hi = out.clip_lo + step * static_cast<Scalar>(p.max_code());
  const Scalar z = std::round(-out.clip_lo / step);
  out.zero_point = static_cast<std::int32_t>(std::clamp(z, Scalar(0), static_cast<Scalar>(p.max_code())));
  return out;
}

template <typename Derived>
QuantParams<typename Derived::Scalar> fit_minmax(const Eigen::DenseBase<Derived>& values, int bits) {
  check_bits(bits);
  if (values.size() == 0) throw Error("fit_minmax: empty input");
  return make_params(values.minCoeff(), values.maxCoeff(), bits);
}

template <typename Derived, typename Scalar = typename Derived::Scalar>
Eigen::Matrix<std::int32_t, Eigen::Dynamic, 1> quantize_rtn(const Eigen::DenseBase<Derived>& values,
                                                           const QuantParams<Scalar>& p) {
  Eigen::Matrix<std::int32_t, Eigen::Dynamic, 1> codes(values.size());
  for (Index i = 0; i < values.size(); ++i) codes[i] = p.quantize(values.derived().coeff(i));
  return codes;
}

template <typename Derived, typename Scalar>
Vector<Scalar> dequantize(const Eigen::DenseBase<Derived>& codes, const QuantParams<Scalar>& p) {
  Vector<Scalar> out(codes.size());
  for (Index i = 0; i < codes.size(); ++i) {
    const auto c = static_cast<std::int32_t>(codes.derived().coeff(i));
    if (c < 0 || c > p.max_code()) throw Error("dequantize: code out of range");
    out[i] = p.dequantize(c);
  }
  return out;
}

/// Sum of squared round-trip errors of values on grid p.
template <typename Derived, typename Scalar = typename Derived::Scalar>
Scalar quant_error(const Eigen::DenseBase<Derived>& values, const QuantParams<Scalar>& p) {
  Scalar err = 0;
  for (Index i = 0; i < values.size(); ++i) {
    const Scalar v = values.derived().coeff(i);
    const Scalar d = v - p.round_trip(v);
    err += d * d;
  }
  return err;
}

/// Greedy clip-range search. Shrink factors 1 - t (1 - maxshrink) / (grid_points - 1)
/// for t = 0 .. grid_points - 1 scale the [min, max] half-width around its
/// midpoint; the grid with the smallest squared round-trip error wins, the
/// earliest factor on ties. t = 0 is the min-max grid itself.
template <typename Derived>
QuantParams<typename Derived::Scalar> search_clip(const Eigen::DenseBase<Derived>& values, int bits,
                                                  int grid_points, double maxshrink) {
  using Scalar = typename Derived::Scalar;
  if (grid_points < 2) throw Error("search_clip: grid_points must be >= 2");
  if (!(maxshrink > 0.0 && maxshrink < 1.0)) throw Error("search_clip: maxshrink must be in (0, 1)");
  auto best = fit_minmax(values, bits);
  Scalar best_err = quant_error(values, best);
  const Scalar lo = values.minCoeff();
  const Scalar hi = values.maxCoeff();
  const Scalar mid = (lo + hi) / Scalar(2);
  const Scalar half = (hi - lo) / Scalar(2);
  for (int t = 1; t < grid_points; ++t) {
    const Scalar shrink = static_cast<Scalar>(1.0 - t * (1.0 - maxshrink) / (grid_points - 1));
    const auto p = make_params(mid - shrink * half, mid + shrink * half, bits);
    const Scalar err = quant_error(values, p);
    if (err < best_err) {
      best = p;
      best_err = err;
    }
  }
  return best;
}

struct GridOptions {
  bool clip_search = true;
  int grid_points = 100;
  double maxshrink = 0.2;
};

template <typename Derived>
QuantParams<typename Derived::Scalar> fit_grid(const Eigen::DenseBase<Derived>& values, int bits,
                                               const GridOptions& opts) {
  return opts.clip_search ? search_clip(values, bits, opts.grid_points, opts.maxshrink) : fit_minmax(values, bits);
}

}  // namespace owq

#endif  // OWQ_QUANTGRID_HPP_
