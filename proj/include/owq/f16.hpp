// Copyright 2026 The owq-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OWQ_F16_HPP_
#define OWQ_F16_HPP_

#include <bit>
#include <cstdint>

#include <Eigen/Core>

namespace owq {

// IEEE 754 binary16, round-to-nearest-even on narrowing.

inline std::uint16_t f16_bits(float v) { return std::bit_cast<std::uint16_t>(Eigen::half(v)); }

inline float f16_to_float(std::uint16_t bits) {
  return static_cast<float>(std::bit_cast<Eigen::half>(bits));
}

/// Rounds a float to the nearest representable binary16 value.
inline float round_f16(float v) { return static_cast<float>(Eigen::half(v)); }

}  // namespace owq

#endif  // OWQ_F16_HPP_
