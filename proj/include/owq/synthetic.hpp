// Copyright 2026 The owq-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OWQ_SYNTHETIC_HPP_
#define OWQ_SYNTHETIC_HPP_

#include <cstdint>
#include <utility>
#include <vector>

#include "owq/core.hpp"

namespace owq {

struct OutlierChannel {
  Index channel = 0;
  float scale = 1.0f;
};

/// Fixture description: a standard-normal layer and calibration batch whose
/// listed input channels are scaled up to mimic activation outliers.
struct SyntheticSpec {
  Index c_in = 0;
  Index c_out = 0;
  Index n_samples = 0;
  std::vector<OutlierChannel> outlier_channels;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticLayer {
  MatrixF w;  // c_out x c_in
  MatrixF x;  // c_in x n_samples
};

/// W is drawn first, then X, both from one Rng(seed) stream in row-major order.
SyntheticLayer gen_synthetic(const SyntheticSpec& spec);

/// rows x cols standard-normal matrix from the given seed.
MatrixF gaussian_matrix(Index rows, Index cols, std::uint64_t seed);

}  // namespace owq

#endif  // OWQ_SYNTHETIC_HPP_
