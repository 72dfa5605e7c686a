// Copyright 2026 The owq-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <vector>

#include "doctest.h"
#include "owq/quantgrid.hpp"
#include "owq/rng.hpp"
#include "owq/synthetic.hpp"

using namespace owq;

namespace {

VectorF vec(std::initializer_list<float> v) { return Eigen::Map<const VectorF>(v.begin(), Index(v.size())); }

// Exhaustive evaluation of every shrink factor, written independently of search_clip.
float brute_force_best_error(const VectorF& v, int bits, int grid_points, double maxshrink) {
  const double lo = v.minCoeff(), hi = v.maxCoeff();
  const double levels = std::pow(2.0, bits) - 1.0;
  float best = std::numeric_limits<float>::infinity();
  for (int t = 0; t < grid_points; ++t) {
    const double p = 1.0 - t * (1.0 - maxshrink) / (grid_points - 1);
    const float a = static_cast<float>((lo + hi) / 2 - p * (hi - lo) / 2);
    const float b = static_cast<float>((lo + hi) / 2 + p * (hi - lo) / 2);
    const float step = (b - a) / static_cast<float>(levels);
    float err = 0.0f;
    for (Index i = 0; i < v.size(); ++i) {
      float c = std::round((v[i] - a) / step);
      c = std::min(std::max(c, 0.0f), static_cast<float>(levels));
      const float d = v[i] - (a + step * c);
      err += d * d;
    }
    best = std::min(best, err);
  }
  return best;
}

}  // namespace

TEST_CASE("min-max grid on [0, 7] at 3 bits") {
  const auto p = fit_minmax(vec({0, 7}), 3);
  CHECK(p.step == 1.0f);
  CHECK(p.clip_lo == 0.0f);
  CHECK(p.clip_hi == 7.0f);
  CHECK(p.zero_point == 0);
  for (int c = 0; c <= 7; ++c) CHECK(p.dequantize(c) == static_cast<float>(c));
  CHECK(p.quantize(3.4f) == 3);
  CHECK(p.quantize(100.0f) == 7);
  CHECK(p.quantize(-5.0f) == 0);
}

TEST_CASE("min-max grid on [-1, 2] at 2 bits") {
  const auto p = fit_minmax(vec({-1, 2}), 2);
  CHECK(p.step == 1.0f);
  const auto deq = dequantize(Eigen::Vector4i(0, 1, 2, 3), p);
  CHECK(deq == vec({-1, 0, 1, 2}));
  CHECK(p.zero_point == 1);
}

TEST_CASE("constant input reproduces the constant") {
  const auto p = fit_minmax(vec({5, 5, 5}), 3);
  CHECK(p.step > 0.0f);
  CHECK(p.round_trip(5.0f) == 5.0f);
  CHECK(quant_error(vec({5, 5, 5}), p) == 0.0f);
}

TEST_CASE("rounding is half away from zero") {
  const auto p = fit_minmax(vec({0, 7}), 3);
  CHECK(p.quantize(2.5f) == 3);
  CHECK(p.quantize(0.5f) == 1);
  const auto q = fit_minmax(vec({-7, 0}), 3);
  CHECK(q.quantize(-2.5f) == 5);  // (-2.5 + 7) / 1 = 4.5
}

TEST_CASE("grid endpoints and code idempotence") {
  Rng rng(4);
  for (int bits = kMinBits; bits <= kMaxBits; ++bits) {
    const VectorF v = gaussian_matrix(1, 33, rng()).transpose();
    const auto p = fit_minmax(v, bits);
    CHECK(p.dequantize(0) == p.clip_lo);
    CHECK(p.dequantize(p.max_code()) == doctest::Approx(p.clip_hi));
    CHECK(p.step == doctest::Approx((p.clip_hi - p.clip_lo) / p.max_code()));
    for (std::int32_t c = 0; c <= p.max_code(); ++c) CHECK(p.quantize(p.dequantize(c)) == c);
    const auto codes = quantize_rtn(v, p);
    CHECK(quantize_rtn(dequantize(codes, p), p) == codes);
  }
}

TEST_CASE("out-of-range codes and bad inputs") {
  const auto p = fit_minmax(vec({0, 7}), 3);
  CHECK_THROWS_AS(dequantize(Eigen::Vector2i(0, 8), p), Error);
  CHECK_THROWS_AS(dequantize(Eigen::Vector2i(-1, 0), p), Error);
  CHECK_THROWS_AS(fit_minmax(VectorF(0), 3), Error);
  CHECK_THROWS_AS(fit_minmax(vec({1, 2}), 1), Error);
  CHECK_THROWS_AS(fit_minmax(vec({1, 2}), 9), Error);
  CHECK_THROWS_AS(search_clip(vec({1, 2}), 3, 1, 0.2), Error);
  CHECK_THROWS_AS(search_clip(vec({1, 2}), 3, 10, 1.0), Error);
}

TEST_CASE("codes are monotone in the value") {
  Rng rng(12);
  const auto p = fit_minmax(vec({-3, 4}), 3);
  for (int i = 0; i < 500; ++i) {
    const float a = static_cast<float>(rng.uniform(-5, 5));
    const float b = static_cast<float>(rng.uniform(-5, 5));
    if (a <= b) CHECK(p.quantize(a) <= p.quantize(b));
  }
}

TEST_CASE("quantization is scale-equivariant") {
  Rng rng(2);
  for (float c : {0.5f, 2.0f, 3.0f, 10.0f}) {
    const VectorF v = gaussian_matrix(1, 40, rng()).transpose();
    const VectorF cv = c * v;
    const auto p = fit_minmax(v, 3);
    const auto cp = fit_minmax(cv, 3);
    const VectorF a = dequantize(quantize_rtn(cv, cp), cp);
    const VectorF b = c * dequantize(quantize_rtn(v, p), p);
    CHECK((a - b).norm() <= 1e-5 * b.norm());
  }
}

TEST_CASE("clip search trims a single outlier") {
  Rng rng(1);
  VectorF v(64);
  for (Index i = 0; i < 63; ++i) v[i] = static_cast<float>(rng.uniform(-1, 1));
  v[63] = 10.0f;
  const auto mm = fit_minmax(v, 3);
  const auto best = search_clip(v, 3, 100, 0.2);
  CHECK(best.clip_hi < 10.0f);
  CHECK(quant_error(v, best) < quant_error(v, mm));
  CHECK(quant_error(v, best) == doctest::Approx(brute_force_best_error(v, 3, 100, 0.2)).epsilon(1e-6));
}

TEST_CASE("grid-aligned values keep the full range") {
  VectorF v(8);
  for (Index i = 0; i < 8; ++i) v[i] = -1.0f + 0.25f * static_cast<float>(i);
  const auto best = search_clip(v, 3, 100, 0.2);
  CHECK(quant_error(v, best) == 0.0f);
  CHECK(best.clip_lo == fit_minmax(v, 3).clip_lo);
  CHECK(best.clip_hi == fit_minmax(v, 3).clip_hi);
}

TEST_CASE("clip search never loses to min-max") {
  const VectorF g = gaussian_matrix(1, 256, 77).transpose();
  CHECK(quant_error(g, search_clip(g, 3, 100, 0.5)) <= quant_error(g, fit_minmax(g, 3)));
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const int bits = kMinBits + static_cast<int>(rng.below(kMaxBits - kMinBits + 1));
    const VectorF v = gaussian_matrix(1, 1 + static_cast<Index>(rng.below(80)), rng()).transpose();
    CHECK(quant_error(v, search_clip(v, bits, 100, 0.2)) <= quant_error(v, fit_minmax(v, bits)));
  }
}

TEST_CASE("fit_grid honours the clip-search switch") {
  const VectorF v = vec({-1, -0.5f, 0, 0.2f, 0.4f, 8});
  CHECK(fit_grid(v, 3, {.clip_search = false}).clip_hi == 8.0f);
  CHECK(fit_grid(v, 3, {}).clip_hi < 8.0f);
}

TEST_CASE("binary16 snapping keeps the grid consistent") {
  const auto p = snap_f16(fit_minmax(vec({-0.37f, 1.913f}), 4));
  CHECK(p.step == round_f16(p.step));
  CHECK(p.clip_lo == round_f16(p.clip_lo));
  CHECK(p.clip_hi == p.clip_lo + p.step * 15.0f);
  const auto tiny = snap_f16(make_params(0.0f, 1e-9f, 3));
  CHECK(tiny.step > 0.0f);
}
