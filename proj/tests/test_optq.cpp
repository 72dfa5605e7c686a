// Copyright 2026 The owq-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <vector>

#include "doctest.h"
#include "owq/optq.hpp"
#include "owq/rng.hpp"
#include "owq/synthetic.hpp"

using namespace owq;

namespace {

// Gaussian elimination with partial pivoting; a is n x n, b is n x r.
std::vector<std::vector<double>> solve(std::vector<std::vector<double>> a, std::vector<std::vector<double>> b) {
  const std::size_t n = a.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    }
    std::swap(a[c], a[piv]);
    std::swap(b[c], b[piv]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      for (std::size_t k = 0; k < b[r].size(); ++k) b[r][k] -= f * b[c][k];
    }
  }
  for (std::size_t r = 0; r < n; ++r) {
    for (auto& v : b[r]) v /= a[r][r];
  }
  return b;
}

// Correlated calibration data: mixes of a few latent directions plus noise.
MatrixF correlated_x(Index c_in, Index n, std::uint64_t seed) {
  const MatrixF mix = gaussian_matrix(c_in, c_in / 2 + 1, seed);
  const MatrixF z = gaussian_matrix(c_in / 2 + 1, n, seed + 1000);
  return mix * z + 0.1f * gaussian_matrix(c_in, n, seed + 2000);
}

template <typename Scalar>
HessianState<Scalar> dampened(const MatrixF& x, double percdamp = 0.01) {
  HessianState<Scalar> s(x.rows());
  accumulate(s, x);
  dampen(s, static_cast<Scalar>(percdamp));
  return s;
}

double output_error(const MatrixF& w, const MatrixF& w_hat, const MatrixF& x) {
  return ((w - w_hat).cast<double>() * x.cast<double>()).squaredNorm();
}

}  // namespace

TEST_CASE("compensation step examples") {
  const MatrixF w = gaussian_matrix(3, 4, 1);
  CHECK(compensation_step<float>(w, VectorF::Zero(3), VectorF::Ones(4)) == w);
  CHECK(compensation_step<float>(w, VectorF::Ones(3), VectorF::Zero(4)) == w);
  const VectorF e = gaussian_matrix(3, 1, 2);
  const VectorF r = gaussian_matrix(4, 1, 3);
  const MatrixF out = compensation_step<float>(w, e, r);
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 4; ++j) CHECK(out(i, j) == doctest::Approx(w(i, j) - e[i] * r[j]).epsilon(1e-6));
  }
  CHECK_THROWS_AS(compensation_step<float>(w, VectorF::Ones(2), r), Error);
}

TEST_CASE("act order permutation") {
  HessianState<float> s(3);
  s.h.diagonal() << 1, 9, 4;
  CHECK(act_order_permutation(s) == std::vector<Index>{1, 2, 0});
  HessianState<float> flat(4);
  flat.h.diagonal().setConstant(2.0f);
  CHECK(act_order_permutation(flat) == std::vector<Index>{0, 1, 2, 3});
  HessianState<float> rnd(20);
  rnd.h.diagonal() = gaussian_matrix(20, 1, 6).cwiseAbs();
  const auto perm = act_order_permutation(rnd);
  for (std::size_t i = 1; i < perm.size(); ++i) CHECK(rnd.h(perm[i - 1], perm[i - 1]) >= rnd.h(perm[i], perm[i]));
}

TEST_CASE("diagonal Hessian reduces to round-to-nearest") {
  const MatrixF w = gaussian_matrix(8, 16, 4);
  HessianState<float> s(16);
  s.h = 2.0f * MatrixF::Identity(16, 16);
  OptqOptions<float> opts;
  opts.bits = 3;
  const auto q = quantize_layer(w, s, opts);
  const auto r = rtn_layer(w, opts);
  CHECK(q.q_codes == r.q_codes);
  CHECK(q.dequantized() == r.dequantized());
}

TEST_CASE("two-column compensation matches the least-squares minimizer") {
  // w = [0.6, 0.4], H = [[4, 2], [2, 3]], column 0 rounded onto {0, 1} gives 1.
  Matrix<double> h(2, 2);
  h << 4, 2, 2, 3;
  const auto u = cholesky_inverse<double>(h).u;
  const double w0 = 0.6, w1 = 0.4, q0 = 1.0;
  const double err = (w0 - q0) / u(0, 0);
  const double engine_w1 = w1 - err * u(0, 1);
  // Minimize [d0 d1] H [d0 d1]^T over d1 with d0 = q0 - w0: d1 = -H10 d0 / H11.
  const double oracle_w1 = w1 - h(1, 0) * (q0 - w0) / h(1, 1);
  CHECK(engine_w1 == doctest::Approx(oracle_w1).epsilon(1e-12));
  CHECK(oracle_w1 == doctest::Approx(0.4 - 0.4 * 2.0 / 3.0));
}

TEST_CASE("every step solves the constrained quadratic problem") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const Index c_in = 2 + static_cast<Index>(rng.below(7));
    const Index c_out = 1 + static_cast<Index>(rng.below(4));
    const MatrixF w = gaussian_matrix(c_out, c_in, rng());
    const auto s = dampened<double>(correlated_x(c_in, 3 * c_in, rng()));
    OptqOptions<double> opts;
    opts.bits = 2 + static_cast<int>(rng.below(3));
    opts.block_size = 1 + static_cast<Index>(rng.below(4));
    opts.act_order = rng.below(2) == 1;
    double worst = 0.0;
    opts.observer = [&](const StepTrace<double>& t) {
      const auto& order = *t.order;
      const std::size_t rest = order.size() - static_cast<std::size_t>(t.position) - 1;
      if (rest == 0) return;
      std::vector<std::vector<double>> a(rest, std::vector<double>(rest));
      std::vector<std::vector<double>> b(rest, std::vector<double>(static_cast<std::size_t>(c_out)));
      for (std::size_t r = 0; r < rest; ++r) {
        const Index jr = order[t.position + 1 + r];
        for (std::size_t c = 0; c < rest; ++c) a[r][c] = s.h(jr, order[t.position + 1 + c]);
        for (Index i = 0; i < c_out; ++i) {
          const double d0 = t.after(i, 0) - t.before(i, 0);
          b[r][static_cast<std::size_t>(i)] = -s.h(jr, t.column) * d0;
        }
      }
      const auto delta = solve(a, b);
      double num = 0.0, den = 0.0;
      for (std::size_t r = 0; r < rest; ++r) {
        for (Index i = 0; i < c_out; ++i) {
          const double oracle = delta[r][static_cast<std::size_t>(i)];
          const double engine = t.after(i, 1 + r) - t.before(i, 1 + r);
          num += (engine - oracle) * (engine - oracle);
          den += oracle * oracle;
        }
      }
      if (den > 0) worst = std::max(worst, std::sqrt(num / den));
    };
    quantize_layer(w, s, opts);
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("compensation beats round-to-nearest on correlated data") {
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const MatrixF w = gaussian_matrix(16, 32, seed);
    const MatrixF x = correlated_x(32, 256, seed + 7);
    const auto s = dampened<float>(x);
    OptqOptions<float> opts;
    opts.bits = 3;
    const auto q = quantize_layer(w, s, opts);
    const auto r = rtn_layer(w, opts);
    if (output_error(w, q.dequantized(), x) <= output_error(w, r.dequantized(), x)) ++wins;
  }
  CHECK(wins >= 95);
}

TEST_CASE("lazy blocks match the unblocked reference") {
  const MatrixF w = gaussian_matrix(12, 40, 21);
  const auto s = dampened<double>(correlated_x(40, 200, 22));
  OptqOptions<double> opts;
  opts.bits = 4;
  opts.block_size = 1;
  const auto ref = quantize_layer(w, s, opts).dequantized();
  for (Index bs : {3, 8, 128}) {
    opts.block_size = bs;
    const auto got = quantize_layer(w, s, opts).dequantized();
    CHECK((got - ref).norm() <= 1e-4 * ref.norm());
  }
}

TEST_CASE("skipped columns are never rounded") {
  const MatrixF w = gaussian_matrix(6, 10, 31);
  const auto s = dampened<float>(correlated_x(10, 80, 32));
  OptqOptions<float> opts;
  opts.skip_columns = {2, 7};
  const auto with = quantize_layer(w, s, opts);
  for (Index i = 0; i < 6; ++i) {
    CHECK(with.q_codes(i, 2) == kSkippedCode);
    CHECK(with.q_codes(i, 7) == kSkippedCode);
    CHECK(with.q_codes(i, 3) != kSkippedCode);
  }
  CHECK(with.order.back() == 7);
  CHECK(with.updated_skip_values.cols() == 2);
  CHECK_FALSE(with.updated_skip_values.col(0) == VectorF(w.col(2)));

  opts.compensate_weak = false;
  const auto frozen = quantize_layer(w, s, opts);
  CHECK(frozen.updated_skip_values.col(0) == VectorF(w.col(2)));
  CHECK(frozen.updated_skip_values.col(1) == VectorF(w.col(7)));
  CHECK(frozen.dequantized().col(2) == w.col(2));

  opts.skip_columns = {7, 2};
  CHECK_THROWS_AS(quantize_layer(w, s, opts), Error);
  opts.skip_columns = {10};
  CHECK_THROWS_AS(quantize_layer(w, s, opts), Error);
}

TEST_CASE("power-of-two scaling of the inputs keeps every decision") {
  const MatrixF w = gaussian_matrix(5, 12, 41);
  const MatrixF x = correlated_x(12, 60, 42);
  OptqOptions<float> opts;
  const auto a = quantize_layer(w, dampened<float>(x), opts);
  const auto b = quantize_layer(w, dampened<float>(MatrixF(2.0f * x)), opts);
  CHECK(a.q_codes == b.q_codes);
  CHECK(b.layer_error_proxy == doctest::Approx(4.0 * a.layer_error_proxy).epsilon(1e-5));
}

TEST_CASE("grouped grids") {
  const MatrixF w = gaussian_matrix(4, 32, 51);
  const auto s = dampened<float>(correlated_x(32, 100, 52));
  OptqOptions<float> opts;
  opts.group_size = 8;
  const auto res = quantize_layer(w, s, opts);
  CHECK(res.n_groups == 4);
  CHECK(res.params.size() == 16);
  const MatrixF deq = res.dequantized();
  for (Index i = 0; i < 4; ++i) {
    for (Index j = 0; j < 32; ++j) {
      const auto& g = res.grid(i, j);
      CHECK(deq(i, j) == g.dequantize(g.quantize(deq(i, j))));
    }
  }
  opts.group_size = 5;
  CHECK_THROWS_AS(quantize_layer(w, s, opts), Error);
}

TEST_CASE("dead columns are rounded without compensation") {
  MatrixF x = correlated_x(8, 50, 61);
  x.row(3).setZero();
  const auto s = dampened<float>(x);
  const MatrixF w = gaussian_matrix(4, 8, 62);
  OptqOptions<float> opts;
  const auto q = quantize_layer(w, s, opts);
  const auto r = rtn_layer(w, opts);
  for (Index i = 0; i < 4; ++i) CHECK(q.q_codes(i, 3) == r.q_codes(i, 3));
}

TEST_CASE("shape checks") {
  HessianState<float> s(4);
  s.h = MatrixF::Identity(4, 4);
  OptqOptions<float> opts;
  CHECK_THROWS_AS(quantize_layer(MatrixF::Ones(2, 5), s, opts), Error);
  opts.bits = 1;
  CHECK_THROWS_AS(quantize_layer(MatrixF::Ones(2, 4), s, opts), Error);
}
