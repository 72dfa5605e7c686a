// Copyright 2026 The owq-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OWQ_PACKED_HPP_
#define OWQ_PACKED_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "owq/archive.hpp"
#include "owq/core.hpp"
#include "owq/optq.hpp"
#include "owq/quantgrid.hpp"
#include "owq/selector.hpp"

namespace owq {

/// Bits are packed LSB-first into little-endian bytes, row by row; each row
/// starts on a fresh byte.
std::vector<std::uint8_t> pack_codes(const CodeMatrix& codes, int bits);
CodeMatrix unpack_codes(std::span<const std::uint8_t> blob, Index rows, Index cols, int bits);
Index packed_row_bytes(Index cols, int bits);

/// A quantized linear layer as stored: low-bit codes with zero-filled weak
/// columns, binary16 (step, clip_lo) grid pairs, and the fp16 weak-column
/// sidecar with its u16 column indices.
///
/// In storage-favored mode the weak columns are omitted from packed_codes;
/// the remaining columns keep their ascending order.
struct QuantizedLayer {
  Index c_out = 0;
  Index c_in = 0;
  int bits = 0;
  Index group_size = 0;
  AccountingMode mode = AccountingMode::latency_favored;
  std::vector<std::uint8_t> packed_codes;
  std::vector<std::uint16_t> qparams;      // f16 bits, [c_out][n_groups][2]
  std::vector<std::uint16_t> weak_indices;
  std::vector<std::uint16_t> weak_values;  // f16 bits, [c_out][k]

  Index k() const { return static_cast<Index>(weak_indices.size()); }
  Index n_groups() const { return group_size == 0 ? 1 : c_in / group_size; }
  Index packed_cols() const { return mode == AccountingMode::latency_favored ? c_in : c_in - k(); }
  QuantParams<float> grid(Index row, Index col) const;

  /// Codes laid out over all c_in columns (weak columns read as 0).
  CodeMatrix codes() const;
  /// Weak-column sidecar widened to f32, c_out x k.
  MatrixF weak_matrix() const;

  /// Payload bytes of the four serialized entries (codes padded to u32).
  std::size_t serialized_bytes() const;

  void validate() const;

  friend bool operator==(const QuantizedLayer&, const QuantizedLayer&) = default;
};

/// Throws unless selected equals result.skip_columns.
QuantizedLayer assemble_layer(const OptqResult<float>& result, std::span<const Index> selected, AccountingMode mode);
QuantizedLayer assemble_layer(const OptqResult<float>& result, const SensitivityReport<float>& report,
                              AccountingMode mode);

MatrixF dequantize_layer(const QuantizedLayer& layer);

/// Entries `<prefix>.codes|qparams|weak_idx|weak_val` plus metadata keys
/// `<prefix>.bits|group_size|mode|c_out|c_in`. An empty sidecar writes no
/// weak_idx/weak_val entries.
void write_layer(TensorArchive& archive, const std::string& prefix, const QuantizedLayer& layer);
QuantizedLayer read_layer(const TensorArchive& archive, const std::string& prefix);
bool has_layer(const TensorArchive& archive, const std::string& prefix);

/// `<prefix>.sens.lambda|delta_norms|score` (f32) and `<prefix>.sens.selected` (u16).
void write_sensitivity(TensorArchive& archive, const std::string& prefix, const SensitivityReport<float>& report);
SensitivityReport<float> read_sensitivity(const TensorArchive& archive, const std::string& prefix);

}  // namespace owq

#endif  // OWQ_PACKED_HPP_
