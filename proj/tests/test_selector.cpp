// Copyright 2026 The owq-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "owq/selector.hpp"
#include "owq/synthetic.hpp"

using namespace owq;

namespace {

SensitivityReport<float> report_of(std::initializer_list<float> s) {
  SensitivityReport<float> r;
  r.sensitivity = Eigen::Map<const VectorF>(s.begin(), Index(s.size()));
  r.lambda_diag = VectorF::Ones(r.sensitivity.size());
  r.delta_norms = r.sensitivity;
  return r;
}

HessianState<float> hessian_of(const MatrixF& x) {
  HessianState<float> s(x.rows());
  accumulate(s, x);
  return s;
}

std::vector<LayerDims> opt175b_block() {
  const Index d = 12288;
  return {{d, d}, {d, d}, {d, d}, {d, d}, {4 * d, d}, {d, 4 * d}};
}

}  // namespace

TEST_CASE("sensitivity is lambda times the column error") {
  // Columns 0 and 1 each round by 0.5 in four rows on the {0, 1, 2, 3} grid.
  MatrixF w(4, 4);
  for (Index i = 0; i < 4; ++i) w.row(i) << 0.5f, 2.5f, 0.0f, 3.0f;
  HessianState<float> s(4);
  s.h.diagonal() << 1, 100, 5, 5;
  const auto r = column_sensitivities(w, s, 2, {.clip_search = false});
  CHECK(r.delta_norms[0] == 1.0f);
  CHECK(r.delta_norms[1] == 1.0f);
  CHECK(r.sensitivity[0] == 1.0f);
  CHECK(r.sensitivity[1] == 100.0f);
  CHECK(r.sensitivity[2] == 0.0f);
  for (Index j = 0; j < 4; ++j) CHECK(r.sensitivity[j] == r.lambda_diag[j] * r.delta_norms[j]);
}

TEST_CASE("representable weights have zero sensitivity") {
  MatrixF w(3, 8);
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 8; ++j) w(i, j) = static_cast<float>((i + j) % 8) * 0.5f - 1.0f;
  }
  const auto r = column_sensitivities(w, hessian_of(gaussian_matrix(8, 20, 1)), 3);
  CHECK(r.sensitivity.isZero(0.0f));
}

TEST_CASE("outlier channel is the most sensitive") {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto f = gen_synthetic({.c_in = 8, .c_out = 8, .n_samples = 256, .outlier_channels = {{3, 50.0f}}, .seed = seed});
    const auto r = column_sensitivities(f.w, hessian_of(f.x), 3);
    Index arg = 0;
    r.sensitivity.maxCoeff(&arg);
    if (arg == 3) ++hits;
  }
  CHECK(hits >= 95);
}

TEST_CASE("selection rules") {
  CHECK(select_weak_columns(report_of({3, 1, 2}), 0).empty());
  CHECK(select_weak_columns(report_of({5, 5, 1}), 1) == std::vector<Index>{0});
  CHECK(select_weak_columns(report_of({1, 5, 5}), 1) == std::vector<Index>{1});
  CHECK(select_weak_columns(report_of({3, 1, 2}), 3) == std::vector<Index>{0, 1, 2});
  CHECK(select_weak_columns(report_of({1, 9, 4, 7}), 2) == std::vector<Index>{1, 3});
  CHECK_THROWS_AS(select_weak_columns(report_of({1, 2}), 3), Error);
}

TEST_CASE("selection nests as k grows") {
  const auto f = gen_synthetic({.c_in = 32, .c_out = 16, .n_samples = 128, .outlier_channels = {{4, 8.0f}, {20, 3.0f}}, .seed = 5});
  const auto r = column_sensitivities(f.w, hessian_of(f.x), 3);
  for (Index k = 0; k < 32; ++k) {
    const auto a = select_weak_columns(r, k);
    const auto b = select_weak_columns(r, k + 1);
    CHECK(std::includes(b.begin(), b.end(), a.begin(), a.end()));
  }
}

TEST_CASE("dead columns rank last") {
  MatrixF x = gaussian_matrix(6, 30, 2);
  x.row(1).setZero();
  auto s = hessian_of(x);
  dampen(s, 0.01f);
  const auto r = column_sensitivities(gaussian_matrix(4, 6, 3), s, 3);
  CHECK(r.dead[1] == 1);
  CHECK(r.sensitivity[1] == 0.0f);
  const auto five = select_weak_columns(r, 5);
  CHECK(std::find(five.begin(), five.end(), 1) == five.end());
}

TEST_CASE("scaling the calibration data keeps the selection") {
  const auto f = gen_synthetic({.c_in = 24, .c_out = 12, .n_samples = 96, .outlier_channels = {{7, 6.0f}}, .seed = 9});
  const auto a = column_sensitivities(f.w, hessian_of(f.x), 3);
  const auto b = column_sensitivities(f.w, hessian_of(MatrixF(3.0f * f.x)), 3);
  for (Index k : {1, 3, 6}) CHECK(select_weak_columns(a, k) == select_weak_columns(b, k));
}

TEST_CASE("sensitivity differs from weight magnitude") {
  // Column 0 has the widest weights but a quiet input; column 5 has small weights on a loud input.
  MatrixF w = 0.1f * gaussian_matrix(8, 8, 11);
  w.col(0) *= 40.0f;
  MatrixF x = gaussian_matrix(8, 256, 12);
  x.row(0) *= 0.01f;
  x.row(5) *= 100.0f;
  Index by_range = 0;
  (w.colwise().maxCoeff() - w.colwise().minCoeff()).maxCoeff(&by_range);
  const auto r = column_sensitivities(w, hessian_of(x), 3);
  CHECK(by_range == 0);
  CHECK(select_weak_columns(r, 1) == std::vector<Index>{5});
}

TEST_CASE("u16 index width") {
  CHECK_NOTHROW(check_index_width(65536));
  CHECK_THROWS_AS(check_index_width(65537), Error);
}

TEST_CASE("budget for a 175B-shaped block") {
  const auto dims = opt175b_block();
  const auto plan = budget_to_k(0.01, dims, 3, AccountingMode::latency_favored);
  CHECK(plan.k_per_layer[0] == 15);
  CHECK(std::abs(static_cast<double>(plan.k_per_layer[0]) / 12288.0 - 0.00125) <= 1.0 / 12288.0);
  CHECK(plan.k_per_layer[4] == 3);
  CHECK(plan.k_per_layer[5] == 15);
  CHECK(0.01 * 175e9 / 8 / 1e6 == doctest::Approx(218.75));
  CHECK(plan.spent_bits() <= plan.total_budget_bits);
}

TEST_CASE("budget floors and never overspends") {
  const std::vector<LayerDims> dims{{64, 64}, {64, 64}, {256, 64}, {64, 256}};
  for (auto mode : {AccountingMode::latency_favored, AccountingMode::storage_favored}) {
    for (double extra : {0.0, 0.01, 0.05, 0.1, 0.3, 1.0}) {
      const auto plan = budget_to_k(extra, dims, 3, mode);
      for (std::size_t l = 0; l < dims.size(); ++l) {
        const double cost = weak_column_cost_bits(dims[l], 3, mode);
        CHECK(static_cast<double>(plan.k_per_layer[l]) * cost <= plan.budget_bits_per_layer[l]);
        CHECK(static_cast<double>(plan.k_per_layer[l] + 1) * cost > plan.budget_bits_per_layer[l]);
      }
      CHECK(plan.average_bits() <= 3.0 + extra + 1e-9);
      if (extra == 0.0) CHECK(std::all_of(plan.k_per_layer.begin(), plan.k_per_layer.end(), [](Index k) { return k == 0; }));
    }
  }
  CHECK_THROWS_AS(budget_to_k(-0.1, dims, 3, AccountingMode::latency_favored), Error);
}

TEST_CASE("weighted budgets") {
  const std::vector<LayerDims> dims{{64, 64}, {64, 64}};
  const std::vector<double> weights{3.0, 1.0};
  const auto plan = budget_to_k(0.5, dims, 3, AccountingMode::latency_favored, weights);
  CHECK(plan.budget_bits_per_layer[0] == doctest::Approx(3.0 * plan.budget_bits_per_layer[1]));
  CHECK(plan.k_per_layer[0] > plan.k_per_layer[1]);
  const std::vector<double> wrong{1.0};
  CHECK_THROWS_AS(budget_to_k(0.5, dims, 3, AccountingMode::latency_favored, wrong), Error);
}

TEST_CASE("effective bit arithmetic") {
  CHECK(effective_bits({4, 8}, 3, 1, AccountingMode::storage_favored) == 5.125);
  CHECK(effective_bits({4, 8}, 3, 1, AccountingMode::latency_favored) == 5.5);
  CHECK(effective_bits({100, 200}, 4, 0, AccountingMode::latency_favored) == 4.0);
  CHECK(effective_bits({100, 200}, 4, 0, AccountingMode::storage_favored) == 4.0);
  for (Index k = 1; k <= 8; ++k) {
    CHECK(effective_bits({4, 8}, 3, k, AccountingMode::storage_favored) <=
          effective_bits({4, 8}, 3, k, AccountingMode::latency_favored));
  }
  CHECK_THROWS_AS(effective_bits({4, 8}, 3, 9, AccountingMode::storage_favored), Error);
}

TEST_CASE("storage-favored 3.01 re-accounted as latency-favored") {
  const auto dims = opt175b_block();
  const auto plan = budget_to_k(0.01, dims, 3, AccountingMode::storage_favored);
  CHECK(plan.average_bits() <= 3.01);
  const double latency = average_effective_bits(dims, 3, plan.k_per_layer, AccountingMode::latency_favored);
  CHECK(latency == doctest::Approx(3.012).epsilon(0.001 / 3.012));
}

TEST_CASE("accounting mode names") {
  CHECK(to_string(AccountingMode::latency_favored) == "latency");
  CHECK(accounting_mode_from_string("storage") == AccountingMode::storage_favored);
  CHECK_THROWS_AS(accounting_mode_from_string("fast"), Error);
}
