// Copyright 2026 The deepbound Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "deepbound/error.hpp"
#include "deepbound/tensor.hpp"

namespace deepbound {

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

}  // namespace detail

/// Sequential reader over an in-memory byte buffer; every short read is a FormatError.
class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes, std::string context = "buffer")
      : bytes_(bytes), context_(std::move(context)) {}

  std::uint32_t u32() {
    require(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string_view take(std::size_t n) {
    require(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void expect_magic(std::string_view magic) {
    if (bytes_.size() - pos_ < magic.size() || take(magic.size()) != magic) {
      throw FormatError(context_ + ": bad magic, expected \"" + std::string(magic) + "\"");
    }
  }

  bool at_end() const noexcept { return pos_ == bytes_.size(); }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  void require(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError(context_ + ": truncated data");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
  std::string context_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

// .dbt layout: "DBT1", u32 rank, rank x u32 dims, then row-major f32 data, all little-endian.
inline void append_dbt(std::string& out, const Tensor& t) {
  out += "DBT1";
  detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
  out.reserve(out.size() + 4 * t.size());
  for (float v : t.values()) detail::put_f32(out, v);
}

inline Tensor read_dbt(ByteReader& in) {
  in.expect_magic("DBT1");
  const std::uint32_t rank = in.u32();
  if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  std::size_t count = 1;
  for (auto& d : shape) {
    d = in.u32();
    if (d == 0) throw FormatError("zero tensor dimension");
    count *= d;
  }
  if (in.remaining() / 4 < count) throw FormatError("truncated tensor payload");
  std::vector<float> data(count);
  for (auto& v : data) v = in.f32();
  return Tensor(std::move(shape), std::move(data));
}

inline std::string encode_dbt(const Tensor& t) {
  std::string out;
  append_dbt(out, t);
  return out;
}

inline void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  write_file(path, encode_dbt(t));
}

inline Tensor load_tensor(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  ByteReader in(bytes, path.string());
  Tensor t = read_dbt(in);
  if (!in.at_end()) throw FormatError(path.string() + ": trailing bytes after tensor");
  return t;
}

}  // namespace deepbound
