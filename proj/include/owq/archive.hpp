// Copyright 2026 The owq-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OWQ_ARCHIVE_HPP_
#define OWQ_ARCHIVE_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "owq/core.hpp"

namespace owq {

// OWQT v1 layout:
//   "OWQT1\n"
//   one JSON line: {"<name>": {"dtype", "shape", "offset", "nbytes"}, ...,
//                   "__metadata__": {"<key>": "<value>", ...}}
//   raw little-endian payload; offsets are relative to the payload start and
//   every entry begins on a 64-byte boundary.

enum class DType { f32, f16, u32, u16 };

std::string_view dtype_name(DType t);
DType dtype_from_name(std::string_view name);
std::size_t dtype_size(DType t);

struct ArchiveEntry {
  DType dtype = DType::f32;
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> bytes;

  std::int64_t numel() const;

  friend bool operator==(const ArchiveEntry&, const ArchiveEntry&) = default;
};

/// Named entries in insertion order plus string metadata. Duplicate names are
/// representable in memory but rejected by save_archive.
class TensorArchive {
 public:
  void add(std::string name, ArchiveEntry entry);
  void add_f32(std::string name, const Tensor& t);
  void add_f32(std::string name, const MatrixF& m) { add_f32(std::move(name), Tensor::from_matrix(m)); }
  void add_f16(std::string name, std::vector<std::int64_t> shape, std::span<const std::uint16_t> bits);
  void add_u16(std::string name, std::vector<std::int64_t> shape, std::span<const std::uint16_t> values);
  void add_u32(std::string name, std::vector<std::int64_t> shape, std::span<const std::uint32_t> values);

  bool contains(std::string_view name) const;
  const ArchiveEntry& at(std::string_view name) const;

  Tensor tensor(std::string_view name) const;
  std::vector<std::uint16_t> u16(std::string_view name) const;
  std::vector<std::uint32_t> u32(std::string_view name) const;
  /// Raw binary16 bit patterns.
  std::vector<std::uint16_t> f16(std::string_view name) const;

  void set_meta(std::string key, std::string value) { metadata_[std::move(key)] = std::move(value); }
  std::optional<std::string> meta(std::string_view key) const;
  std::string meta_or(std::string_view key, std::string fallback) const;

  const std::vector<std::pair<std::string, ArchiveEntry>>& entries() const { return entries_; }
  const std::map<std::string, std::string, std::less<>>& metadata() const { return metadata_; }
  std::size_t size() const { return entries_.size(); }

  /// Names (in order) of entries whose name starts with prefix.
  std::vector<std::string> names_with_prefix(std::string_view prefix) const;

  friend bool operator==(const TensorArchive&, const TensorArchive&) = default;

 private:
  std::vector<std::pair<std::string, ArchiveEntry>> entries_;
  std::map<std::string, std::string, std::less<>> metadata_;
};

/// Encodes to the on-disk byte layout. Throws on duplicate names or
/// degenerate shapes.
std::vector<std::uint8_t> encode_archive(const TensorArchive& archive);
TensorArchive decode_archive(std::span<const std::uint8_t> bytes);

void save_archive(const TensorArchive& archive, const std::filesystem::path& path);
TensorArchive load_archive(const std::filesystem::path& path);

}  // namespace owq

#endif  // OWQ_ARCHIVE_HPP_
