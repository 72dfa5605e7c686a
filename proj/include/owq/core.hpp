// Copyright 2026 The owq-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OWQ_CORE_HPP_
#define OWQ_CORE_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace owq {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using MatrixF = Matrix<float>;
using VectorF = Vector<float>;

/// Row-major code matrix. Skipped (weak) entries hold kSkippedCode.
using CodeMatrix = Matrix<std::int32_t>;
inline constexpr std::int32_t kSkippedCode = -1;

/// All module errors are reported as owq::Error with a short diagnostic.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major f32 tensor with explicit shape, the unit of archive I/O.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<std::int64_t> s, std::vector<float> d);

  static Tensor from_matrix(const MatrixF& m);
  static Tensor from_vector(const VectorF& v);

  std::int64_t numel() const;
  std::int64_t rows() const;
  std::int64_t cols() const;

  /// Copies into an Eigen matrix; 1-D tensors become a single row.
  MatrixF to_matrix() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

}  // namespace owq

#endif  // OWQ_CORE_HPP_
