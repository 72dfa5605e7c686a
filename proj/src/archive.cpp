// Copyright 2026 The owq-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "owq/archive.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little, "OWQT payloads are written in host order");

namespace owq {
namespace {

constexpr std::string_view kMagic = "OWQT1\n";
constexpr std::string_view kMetadataKey = "__metadata__";
constexpr std::size_t kAlign = 64;

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

template <typename T>
ArchiveEntry make_entry(DType dtype, std::vector<std::int64_t> shape, std::span<const T> values) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw Error("entry shape does not match element count");
  }
  ArchiveEntry e;
  e.dtype = dtype;
  e.shape = std::move(shape);
  e.bytes.resize(values.size_bytes());
  if (!values.empty()) std::memcpy(e.bytes.data(), values.data(), values.size_bytes());
  return e;
}

template <typename T>
std::vector<T> read_values(const ArchiveEntry& e, DType expected, std::string_view name) {
  if (e.dtype != expected) {
    throw Error("entry '" + std::string(name) + "' has dtype " + std::string(dtype_name(e.dtype)) +
                ", expected " + std::string(dtype_name(expected)));
  }
  std::vector<T> out(e.bytes.size() / sizeof(T));
  if (!out.empty()) std::memcpy(out.data(), e.bytes.data(), out.size() * sizeof(T));
  return out;
}

std::size_t align_up(std::size_t n) { return (n + kAlign - 1) / kAlign * kAlign; }

void check_finite(const std::string& name, const ArchiveEntry& e) {
  if (e.dtype == DType::f32) {
    for (std::size_t i = 0; i < e.bytes.size(); i += 4) {
      float v;
      std::memcpy(&v, e.bytes.data() + i, 4);
      if (!std::isfinite(v)) throw Error("non-finite value in entry '" + name + "'");
    }
  } else if (e.dtype == DType::f16) {
    for (std::size_t i = 0; i < e.bytes.size(); i += 2) {
      std::uint16_t b;
      std::memcpy(&b, e.bytes.data() + i, 2);
      if ((b & 0x7c00u) == 0x7c00u) throw Error("non-finite value in entry '" + name + "'");
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(std::vector<std::int64_t> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw Error("tensor shape does not match element count");
  }
}

Tensor Tensor::from_matrix(const MatrixF& m) {
  return Tensor({m.rows(), m.cols()}, std::vector<float>(m.data(), m.data() + m.size()));
}

Tensor Tensor::from_vector(const VectorF& v) {
  return Tensor({v.size()}, std::vector<float>(v.data(), v.data() + v.size()));
}

std::int64_t Tensor::numel() const { return shape_numel(shape); }

std::int64_t Tensor::rows() const { return shape.size() >= 2 ? shape[0] : 1; }

std::int64_t Tensor::cols() const {
  if (shape.empty()) return 1;
  return shape.size() == 1 ? shape[0] : numel() / shape[0];
}

MatrixF Tensor::to_matrix() const {
  MatrixF m(rows(), cols());
  if (!data.empty()) std::memcpy(m.data(), data.data(), data.size() * sizeof(float));
  return m;
}

// ---------------------------------------------------------------------------
// dtypes

std::string_view dtype_name(DType t) {
  switch (t) {
    case DType::f32: return "f32";
    case DType::f16: return "f16";
    case DType::u32: return "u32";
    case DType::u16: return "u16";
  }
  return "?";
}

DType dtype_from_name(std::string_view name) {
  if (name == "f32") return DType::f32;
  if (name == "f16") return DType::f16;
  if (name == "u32") return DType::u32;
  if (name == "u16") return DType::u16;
  throw Error("malformed header: unknown dtype '" + std::string(name) + "'");
}

std::size_t dtype_size(DType t) { return (t == DType::f32 || t == DType::u32) ? 4 : 2; }

std::int64_t ArchiveEntry::numel() const { return shape_numel(shape); }

// ---------------------------------------------------------------------------
// TensorArchive

void TensorArchive::add(std::string name, ArchiveEntry entry) {
  entries_.emplace_back(std::move(name), std::move(entry));
}

void TensorArchive::add_f32(std::string name, const Tensor& t) {
  add(std::move(name), make_entry<float>(DType::f32, t.shape, t.data));
}

void TensorArchive::add_f16(std::string name, std::vector<std::int64_t> shape, std::span<const std::uint16_t> bits) {
  add(std::move(name), make_entry<std::uint16_t>(DType::f16, std::move(shape), bits));
}

void TensorArchive::add_u16(std::string name, std::vector<std::int64_t> shape,
                            std::span<const std::uint16_t> values) {
  add(std::move(name), make_entry<std::uint16_t>(DType::u16, std::move(shape), values));
}

void TensorArchive::add_u32(std::string name, std::vector<std::int64_t> shape,
                            std::span<const std::uint32_t> values) {
  add(std::move(name), make_entry<std::uint32_t>(DType::u32, std::move(shape), values));
}

bool TensorArchive::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

const ArchiveEntry& TensorArchive::at(std::string_view name) const {
  for (const auto& [n, e] : entries_) {
    if (n == name) return e;
  }
  throw Error("archive has no entry '" + std::string(name) + "'");
}

Tensor TensorArchive::tensor(std::string_view name) const {
  const auto& e = at(name);
  return Tensor(e.shape, read_values<float>(e, DType::f32, name));
}

std::vector<std::uint16_t> TensorArchive::u16(std::string_view name) const {
  return read_values<std::uint16_t>(at(name), DType::u16, name);
}

std::vector<std::uint32_t> TensorArchive::u32(std::string_view name) const {
  return read_values<std::uint32_t>(at(name), DType::u32, name);
}

std::vector<std::uint16_t> TensorArchive::f16(std::string_view name) const {
  return read_values<std::uint16_t>(at(name), DType::f16, name);
}

std::optional<std::string> TensorArchive::meta(std::string_view key) const {
  auto it = metadata_.find(key);
  if (it == metadata_.end()) return std::nullopt;
  return it->second;
}

std::string TensorArchive::meta_or(std::string_view key, std::string fallback) const {
  auto v = meta(key);
  return v ? *v : std::move(fallback);
}

std::vector<std::string> TensorArchive::names_with_prefix(std::string_view prefix) const {
  std::vector<std::string> out;
  for (const auto& [n, e] : entries_) {
    if (n.starts_with(prefix)) out.push_back(n);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Encoding

std::vector<std::uint8_t> encode_archive(const TensorArchive& archive) {
  std::set<std::string_view> seen;
  nlohmann::ordered_json header = nlohmann::ordered_json::object();
  std::size_t offset = 0;
  for (const auto& [name, e] : archive.entries()) {
    if (name == kMetadataKey) throw Error("entry name '" + name + "' is reserved");
    if (!seen.insert(name).second) throw Error("duplicate entry name '" + name + "'");
    if (e.shape.empty() || std::any_of(e.shape.begin(), e.shape.end(), [](auto d) { return d <= 0; })) {
      throw Error("degenerate shape for entry '" + name + "'");
    }
    const auto nbytes = static_cast<std::size_t>(e.numel()) * dtype_size(e.dtype);
    if (nbytes != e.bytes.size()) throw Error("entry '" + name + "' byte count does not match shape");
    offset = align_up(offset);
    header[name] = {{"dtype", dtype_name(e.dtype)}, {"shape", e.shape}, {"offset", offset}, {"nbytes", nbytes}};
    offset += nbytes;
  }
  if (!archive.metadata().empty()) {
    auto& meta = header[std::string(kMetadataKey)];
    for (const auto& [k, v] : archive.metadata()) meta[k] = v;
  }

  const std::string header_line = header.dump() + "\n";
  std::vector<std::uint8_t> out;
  out.reserve(kMagic.size() + header_line.size() + offset);
  out.insert(out.end(), kMagic.begin(), kMagic.end());
  out.insert(out.end(), header_line.begin(), header_line.end());
  const std::size_t payload_start = out.size();
  for (const auto& [name, e] : archive.entries()) {
    const std::size_t at = payload_start + header[name]["offset"].get<std::size_t>();
    out.resize(at, 0);
    out.insert(out.end(), e.bytes.begin(), e.bytes.end());
  }
  return out;
}

TensorArchive decode_archive(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagic.size() || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    throw Error("malformed header: bad magic");
  }
  const auto nl = std::find(bytes.begin() + kMagic.size(), bytes.end(), std::uint8_t{'\n'});
  if (nl == bytes.end()) throw Error("malformed header: missing header line");
  const std::string header_text(bytes.begin() + kMagic.size(), nl);
  const auto payload = bytes.subspan(static_cast<std::size_t>(nl - bytes.begin()) + 1);

  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(header_text);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(std::string("malformed header: ") + ex.what());
  }
  if (!header.is_object()) throw Error("malformed header: not a JSON object");

  TensorArchive archive;
  try {
    for (const auto& [name, desc] : header.items()) {
      if (name == kMetadataKey) {
        for (const auto& [k, v] : desc.items()) archive.set_meta(k, v.get<std::string>());
        continue;
      }
      ArchiveEntry e;
      e.dtype = dtype_from_name(desc.at("dtype").get<std::string>());
      e.shape = desc.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = desc.at("offset").get<std::size_t>();
      const auto nbytes = desc.at("nbytes").get<std::size_t>();
      if (e.shape.empty() || std::any_of(e.shape.begin(), e.shape.end(), [](auto d) { return d <= 0; })) {
        throw Error("malformed header: degenerate shape for entry '" + name + "'");
      }
      if (static_cast<std::size_t>(e.numel()) * dtype_size(e.dtype) != nbytes) {
        throw Error("malformed header: nbytes does not match shape for entry '" + name + "'");
      }
      if (offset % kAlign != 0) throw Error("malformed header: unaligned offset for entry '" + name + "'");
      if (offset > payload.size() || nbytes > payload.size() - offset) {
        throw Error("payload length mismatch for entry '" + name + "'");
      }
      e.bytes.assign(payload.begin() + offset, payload.begin() + offset + nbytes);
      check_finite(name, e);
      archive.add(name, std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(std::string("malformed header: ") + ex.what());
  }
  return archive;
}

void save_archive(const TensorArchive& archive, const std::filesystem::path& path) {
  const auto bytes = encode_archive(archive);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

TensorArchive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_archive(bytes);
}

}  // namespace owq
