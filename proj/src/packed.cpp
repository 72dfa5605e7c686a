// Copyright 2026 The owq-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "owq/packed.hpp"

#include <algorithm>
#include <cstring>

#include "owq/f16.hpp"

namespace owq {

Index packed_row_bytes(Index cols, int bits) { return (cols * bits + 7) / 8; }

std::vector<std::uint8_t> pack_codes(const CodeMatrix& codes, int bits) {
  check_bits(bits);
  const Index row_bytes = packed_row_bytes(codes.cols(), bits);
  const std::int32_t limit = (std::int32_t{1} << bits) - 1;
  std::vector<std::uint8_t> blob(static_cast<std::size_t>(codes.rows() * row_bytes), 0);
  for (Index i = 0; i < codes.rows(); ++i) {
    std::uint8_t* row = blob.data() + i * row_bytes;
    std::size_t bitpos = 0;
    for (Index j = 0; j < codes.cols(); ++j, bitpos += static_cast<std::size_t>(bits)) {
      const std::int32_t c = codes(i, j);
      if (c < 0 || c > limit) throw Error("pack_codes: code overflow");
      // A code of at most 8 bits straddles at most two bytes.
      const std::uint32_t shifted = static_cast<std::uint32_t>(c) << (bitpos % 8);
      row[bitpos / 8] |= static_cast<std::uint8_t>(shifted & 0xffu);
      if (shifted > 0xffu) row[bitpos / 8 + 1] |= static_cast<std::uint8_t>(shifted >> 8);
    }
  }
  return blob;
}

CodeMatrix unpack_codes(std::span<const std::uint8_t> blob, Index rows, Index cols, int bits) {
  check_bits(bits);
  const Index row_bytes = packed_row_bytes(cols, bits);
  if (static_cast<Index>(blob.size()) != rows * row_bytes) throw Error("unpack_codes: length mismatch");
  const std::uint32_t mask = (1u << bits) - 1u;
  CodeMatrix codes(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const std::uint8_t* row = blob.data() + i * row_bytes;
    std::size_t bitpos = 0;
    for (Index j = 0; j < cols; ++j, bitpos += static_cast<std::size_t>(bits)) {
      const std::size_t byte = bitpos / 8;
      std::uint32_t word = row[byte];
      if (byte + 1 < static_cast<std::size_t>(row_bytes)) word |= static_cast<std::uint32_t>(row[byte + 1]) << 8;
      codes(i, j) = static_cast<std::int32_t>((word >> (bitpos % 8)) & mask);
    }
  }
  return codes;
}

// ---------------------------------------------------------------------------
// QuantizedLayer

QuantParams<float> QuantizedLayer::grid(Index row, Index col) const {
  const Index g = group_size == 0 ? 0 : col / group_size;
  const auto at = static_cast<std::size_t>((row * n_groups() + g) * 2);
  QuantParams<float> p;
  p.bits = bits;
  p.step = f16_to_float(qparams[at]);
  p.clip_lo = f16_to_float(qparams[at + 1]);
  p.clip_hi = p.clip_lo + p.step * static_cast<float>(p.max_code());
  return p;
}

CodeMatrix QuantizedLayer::codes() const {
  const CodeMatrix packed = unpack_codes(packed_codes, c_out, packed_cols(), bits);
  if (mode == AccountingMode::latency_favored) return packed;
  CodeMatrix full = CodeMatrix::Zero(c_out, c_in);
  std::size_t w = 0;
  Index src = 0;
  for (Index j = 0; j < c_in; ++j) {
    if (w < weak_indices.size() && weak_indices[w] == j) {
      ++w;
      continue;
    }
    full.col(j) = packed.col(src++);
  }
  return full;
}

MatrixF QuantizedLayer::weak_matrix() const {
  MatrixF m(c_out, k());
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = f16_to_float(weak_values[static_cast<std::size_t>(i)]);
  return m;
}

std::size_t QuantizedLayer::serialized_bytes() const {
  const std::size_t code_bytes = std::max<std::size_t>(1, (packed_codes.size() + 3) / 4) * 4;
  return code_bytes + 2 * (qparams.size() + weak_indices.size() + weak_values.size());
}

void QuantizedLayer::validate() const {
  check_bits(bits);
  if (c_out <= 0 || c_in <= 0) throw Error("quantized layer: degenerate shape");
  check_index_width(c_in);
  if (group_size < 0 || (group_size > 0 && c_in % group_size != 0)) {
    throw Error("quantized layer: group_size must be 0 or divide c_in");
  }
  for (std::size_t s = 0; s < weak_indices.size(); ++s) {
    if (weak_indices[s] >= c_in || (s > 0 && weak_indices[s] <= weak_indices[s - 1])) {
      throw Error("quantized layer: weak indices must be strictly increasing and < c_in");
    }
  }
  if (static_cast<Index>(weak_values.size()) != c_out * k()) throw Error("quantized layer: weak value count mismatch");
  if (static_cast<Index>(qparams.size()) != c_out * n_groups() * 2) throw Error("quantized layer: qparams size mismatch");
  if (static_cast<Index>(packed_codes.size()) != c_out * packed_row_bytes(packed_cols(), bits)) {
    throw Error("quantized layer: packed code length mismatch");
  }
}

QuantizedLayer assemble_layer(const OptqResult<float>& result, std::span<const Index> selected, AccountingMode mode) {
  if (!std::equal(selected.begin(), selected.end(), result.skip_columns.begin(), result.skip_columns.end())) {
    throw Error("assemble_layer: inconsistent skip sets");
  }
  check_index_width(result.c_in);
  QuantizedLayer layer;
  layer.c_out = result.c_out;
  layer.c_in = result.c_in;
  layer.bits = result.params.front().bits;
  layer.group_size = result.group_size;
  layer.mode = mode;
  for (Index s : selected) layer.weak_indices.push_back(static_cast<std::uint16_t>(s));

  std::vector<char> weak(static_cast<std::size_t>(result.c_in), 0);
  for (Index s : selected) weak[static_cast<std::size_t>(s)] = 1;
  CodeMatrix codes(result.c_out, layer.packed_cols());
  for (Index i = 0; i < result.c_out; ++i) {
    Index dst = 0;
    for (Index j = 0; j < result.c_in; ++j) {
      if (weak[static_cast<std::size_t>(j)]) {
        if (mode == AccountingMode::latency_favored) codes(i, dst++) = 0;
      } else {
        codes(i, dst++) = result.q_codes(i, j);
      }
    }
  }
  layer.packed_codes = pack_codes(codes, layer.bits);

  layer.qparams.reserve(result.params.size() * 2);
  for (const auto& p : result.params) {
    layer.qparams.push_back(f16_bits(p.step));
    layer.qparams.push_back(f16_bits(p.clip_lo));
  }
  layer.weak_values.reserve(static_cast<std::size_t>(result.c_out * layer.k()));
  for (Index i = 0; i < result.c_out; ++i) {
    for (Index s = 0; s < layer.k(); ++s) layer.weak_values.push_back(f16_bits(result.updated_skip_values(i, s)));
  }
  return layer;
}

QuantizedLayer assemble_layer(const OptqResult<float>& result, const SensitivityReport<float>& report,
                              AccountingMode mode) {
  return assemble_layer(result, report.selected, mode);
}

MatrixF dequantize_layer(const QuantizedLayer& layer) {
  const CodeMatrix codes = layer.codes();
  MatrixF out(layer.c_out, layer.c_in);
  for (Index i = 0; i < layer.c_out; ++i) {
    for (Index j = 0; j < layer.c_in; ++j) out(i, j) = layer.grid(i, j).dequantize(codes(i, j));
  }
  const MatrixF weak = layer.weak_matrix();
  for (Index s = 0; s < layer.k(); ++s) out.col(layer.weak_indices[static_cast<std::size_t>(s)]) = weak.col(s);
  return out;
}

// ---------------------------------------------------------------------------
// Archive mapping

namespace {

std::size_t code_words(std::size_t nbytes) { return std::max<std::size_t>(1, (nbytes + 3) / 4); }

}  // namespace

void write_layer(TensorArchive& archive, const std::string& prefix, const QuantizedLayer& layer) {
  layer.validate();
  // An all-weak storage-favored layer has no codes; keep one zero word so the entry is not empty.
  std::vector<std::uint32_t> words(code_words(layer.packed_codes.size()), 0);
  if (!layer.packed_codes.empty()) std::memcpy(words.data(), layer.packed_codes.data(), layer.packed_codes.size());
  archive.add_u32(prefix + ".codes", {static_cast<std::int64_t>(words.size())}, words);
  archive.add_f16(prefix + ".qparams", {layer.c_out, layer.n_groups(), 2}, layer.qparams);
  if (layer.k() > 0) {
    archive.add_u16(prefix + ".weak_idx", {layer.k()}, layer.weak_indices);
    archive.add_f16(prefix + ".weak_val", {layer.c_out, layer.k()}, layer.weak_values);
  }
  archive.set_meta(prefix + ".bits", std::to_string(layer.bits));
  archive.set_meta(prefix + ".group_size", std::to_string(layer.group_size));
  archive.set_meta(prefix + ".mode", std::string(to_string(layer.mode)));
  archive.set_meta(prefix + ".c_out", std::to_string(layer.c_out));
  archive.set_meta(prefix + ".c_in", std::to_string(layer.c_in));
}

bool has_layer(const TensorArchive& archive, const std::string& prefix) {
  return archive.contains(prefix + ".codes");
}

QuantizedLayer read_layer(const TensorArchive& archive, const std::string& prefix) {
  auto meta = [&](const char* key) {
    auto v = archive.meta(prefix + key);
    if (!v) throw Error("missing metadata '" + prefix + key + "'");
    return *v;
  };
  QuantizedLayer layer;
  try {
    layer.bits = std::stoi(meta(".bits"));
    layer.group_size = std::stoll(meta(".group_size"));
    layer.c_out = std::stoll(meta(".c_out"));
    layer.c_in = std::stoll(meta(".c_in"));
  } catch (const std::logic_error&) {
    throw Error("malformed layer metadata for '" + prefix + "'");
  }
  layer.mode = accounting_mode_from_string(meta(".mode"));
  if (archive.contains(prefix + ".weak_idx")) {
    layer.weak_indices = archive.u16(prefix + ".weak_idx");
    layer.weak_values = archive.f16(prefix + ".weak_val");
  }
  layer.qparams = archive.f16(prefix + ".qparams");
  const auto words = archive.u32(prefix + ".codes");
  check_bits(layer.bits);
  if (layer.c_out <= 0 || layer.c_in < layer.k()) throw Error("malformed layer metadata for '" + prefix + "'");
  const auto nbytes = static_cast<std::size_t>(layer.c_out * packed_row_bytes(layer.packed_cols(), layer.bits));
  if (words.size() != code_words(nbytes)) throw Error("packed code length mismatch for '" + prefix + "'");
  layer.packed_codes.resize(nbytes);
  if (nbytes > 0) std::memcpy(layer.packed_codes.data(), words.data(), nbytes);
  layer.validate();
  return layer;
}

void write_sensitivity(TensorArchive& archive, const std::string& prefix, const SensitivityReport<float>& report) {
  archive.add_f32(prefix + ".sens.lambda", Tensor::from_vector(report.lambda_diag));
  archive.add_f32(prefix + ".sens.delta_norms", Tensor::from_vector(report.delta_norms));
  archive.add_f32(prefix + ".sens.score", Tensor::from_vector(report.sensitivity));
  if (!report.selected.empty()) {
    std::vector<std::uint16_t> sel(report.selected.begin(), report.selected.end());
    archive.add_u16(prefix + ".sens.selected", {static_cast<std::int64_t>(sel.size())}, sel);
  }
}

SensitivityReport<float> read_sensitivity(const TensorArchive& archive, const std::string& prefix) {
  auto vec = [&](const std::string& name) {
    const auto t = archive.tensor(prefix + name);
    return VectorF(Eigen::Map<const VectorF>(t.data.data(), static_cast<Index>(t.data.size())));
  };
  SensitivityReport<float> r;
  r.lambda_diag = vec(".sens.lambda");
  r.delta_norms = vec(".sens.delta_norms");
  r.sensitivity = vec(".sens.score");
  r.dead.resize(static_cast<std::size_t>(r.lambda_diag.size()));
  for (Index j = 0; j < r.lambda_diag.size(); ++j) r.dead[static_cast<std::size_t>(j)] = r.lambda_diag[j] == 0.0f;
  if (archive.contains(prefix + ".sens.selected")) {
    for (auto s : archive.u16(prefix + ".sens.selected")) r.selected.push_back(s);
  }
  return r;
}

}  // namespace owq
