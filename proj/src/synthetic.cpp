// Copyright 2026 The owq-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "owq/synthetic.hpp"

#include <string>

#include "owq/rng.hpp"

namespace owq {
namespace {

void fill_normal(MatrixF& m, Rng& rng) {
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal());
}

}  // namespace

void SyntheticSpec::validate() const {
  if (c_in <= 0 || c_out <= 0 || n_samples <= 0) throw Error("synthetic dimensions must be positive");
  for (const auto& o : outlier_channels) {
    if (o.channel < 0 || o.channel >= c_in) {
      throw Error("outlier channel " + std::to_string(o.channel) + " out of range");
    }
    if (!(o.scale >= 1.0f)) throw Error("outlier scale must be >= 1");
  }
}

SyntheticLayer gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  SyntheticLayer out{MatrixF(spec.c_out, spec.c_in), MatrixF(spec.c_in, spec.n_samples)};
  fill_normal(out.w, rng);
  fill_normal(out.x, rng);
  for (const auto& o : spec.outlier_channels) out.x.row(o.channel) *= o.scale;
  return out;
}

MatrixF gaussian_matrix(Index rows, Index cols, std::uint64_t seed) {
  Rng rng(seed);
  MatrixF m(rows, cols);
  fill_normal(m, rng);
  return m;
}

}  // namespace owq
