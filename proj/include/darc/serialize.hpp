#pragma once

// Little-endian byte codecs and the named-tensor record shared by the
// checkpoint and prototype files:
//   u16 name length, UTF-8 name, u8 dtype tag, u8 rank, u64 dims[rank],
//   raw little-endian values.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "darc/error.hpp"
#include "darc/tensor.hpp"

namespace darc::io {

enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v), 4); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }

  void str16(std::string_view s) {
    if (s.size() > 0xFFFF) throw FormatError(FormatErrorKind::kSchemaMismatch, "string too long: " + std::string(s.substr(0, 32)));
    u16(static_cast<std::uint16_t>(s.size()));
    bytes(s);
  }

  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, std::string what) : data_(data), what_(std::move(what)) {}

  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::int32_t i32() { return static_cast<std::int32_t>(static_cast<std::uint32_t>(get(4))); }
  float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(get(4))); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string str16() { return bytes(u16()); }

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

  void expect_end() const {
    if (remaining() != 0) {
      throw FormatError(FormatErrorKind::kTrailingBytes,
                        what_ + ": " + std::to_string(remaining()) + " unexpected bytes after payload");
    }
  }

  void need(std::size_t n) const {
    if (remaining() < n) {
      throw FormatError(FormatErrorKind::kTruncated, what_ + ": needed " + std::to_string(n) + " bytes at offset " +
                                                         std::to_string(pos_) + ", only " +
                                                         std::to_string(remaining()) + " left");
    }
  }

 private:
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::kIo, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorKind::kIo, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatErrorKind::kIo, "short write to " + path);
}

inline void expect_magic(ByteReader& r, std::string_view magic, const std::string& what) {
  if (r.remaining() < magic.size()) {
    const std::string head = r.bytes(r.remaining());
    if (magic.substr(0, head.size()) == head) {
      throw FormatError(FormatErrorKind::kTruncated, what + ": file ends inside the magic \"" + std::string(magic) + "\"");
    }
    throw FormatError(FormatErrorKind::kBadMagic, what + ": expected magic \"" + std::string(magic) + "\"");
  }
  if (r.bytes(magic.size()) != magic) {
    throw FormatError(FormatErrorKind::kBadMagic, what + ": expected magic \"" + std::string(magic) + "\"");
  }
}

inline void write_tensor_record(ByteWriter& w, const std::string& name, const Tensor& t) {
  w.str16(name);
  w.u8(static_cast<std::uint8_t>(DType::kFloat64));
  if (t.rank() > 0xFF) throw FormatError(FormatErrorKind::kSchemaMismatch, "rank too large for " + name);
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) w.u64(d);
  for (double v : t.values()) w.f64(v);
}

struct TensorRecord {
  std::string name;
  DType dtype = DType::kFloat64;
  Tensor tensor;
};

// Reads one record; float32 payloads are widened to double.
inline TensorRecord read_tensor_record(ByteReader& r) {
  TensorRecord rec;
  rec.name = r.str16();
  const auto tag = r.u8();
  if (tag != static_cast<std::uint8_t>(DType::kFloat32) && tag != static_cast<std::uint8_t>(DType::kFloat64)) {
    throw FormatError(FormatErrorKind::kSchemaMismatch, "tensor " + rec.name + ": unknown dtype tag " + std::to_string(tag));
  }
  rec.dtype = static_cast<DType>(tag);
  const auto rank = r.u8();
  Shape shape(rank);
  std::uint64_t n = 1;
  for (auto& d : shape) {
    const auto v = r.u64();
    if (v == 0) throw FormatError(FormatErrorKind::kSchemaMismatch, "tensor " + rec.name + " has a zero dimension");
    d = static_cast<std::size_t>(v);
    n *= v;
  }
  const std::size_t width = rec.dtype == DType::kFloat64 ? 8 : 4;
  if (n > r.remaining() / width) {
    throw FormatError(FormatErrorKind::kTruncated, "tensor " + rec.name + " payload of " + std::to_string(n) +
                                                       " values exceeds remaining bytes");
  }
  std::vector<double> values(static_cast<std::size_t>(n));
  for (auto& v : values) v = rec.dtype == DType::kFloat64 ? r.f64() : static_cast<double>(r.f32());
  rec.tensor = Tensor(std::move(shape), std::move(values));
  return rec;
}

}  // namespace darc::io
