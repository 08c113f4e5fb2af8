#pragma once

// Little-endian byte packing shared by the dataset and checkpoint containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "hfnet/errors.hpp"

namespace hfnet::binio {

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v), 4); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void text(const std::string& s) { bytes(s.data(), s.size()); }
  void f32_array(std::span<const float> v) {
    buf_.reserve(buf_.size() + 4 * v.size());
    for (float x : v) f32(x);
  }

  const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }


 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

class Reader {
 public:
  explicit Reader(std::vector<std::uint8_t> bytes) : buf_(std::move(bytes)) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t size() const noexcept { return buf_.size(); }
  std::size_t remaining() const noexcept { return buf_.size() - pos_; }

  void need(std::size_t n, const std::string& what) const {
    if (remaining() < n) {
      throw FormatError("truncated " + what + ": need " + std::to_string(n) + " bytes, " + std::to_string(remaining()) +
                            " left",
                        pos_);
    }
  }

  std::uint8_t u8(const std::string& what) { return static_cast<std::uint8_t>(le(1, what)); }
  std::uint16_t u16(const std::string& what) { return static_cast<std::uint16_t>(le(2, what)); }
  std::uint32_t u32(const std::string& what) { return static_cast<std::uint32_t>(le(4, what)); }
  float f32(const std::string& what) { return std::bit_cast<float>(u32(what)); }
  void f32_array(std::span<float> out, const std::string& what) {
    need(4 * out.size(), what);
    for (float& x : out) {
      std::uint32_t v = 0;
      for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
      x = std::bit_cast<float>(v);
      pos_ += 4;
    }
  }
  std::string text(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::uint64_t le(int n, const std::string& what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

}  // namespace hfnet::binio
