#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "obac/errors.hpp"

namespace obac {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written as little-endian raw records");

/// Append-only little-endian byte sink used by the buffer and checkpoint formats.
class BinaryWriter {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  void str(std::string_view s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void f64s(const double* p, std::size_t n) { bytes(p, n * sizeof(double)); }
  void matrix(const Eigen::MatrixXd& m);
  void vector(const Eigen::VectorXd& v);

  const std::vector<std::uint8_t>& data() const { return buf_; }
  void write_file(const std::string& path) const;

 private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked reader over a byte image. Any overrun is a FormatError.
class BinaryReader {
 public:
  explicit BinaryReader(std::vector<std::uint8_t> data) : buf_(std::move(data)) {}
  static BinaryReader from_file(const std::string& path);

  void bytes(void* out, std::size_t n) {
    if (n > buf_.size() - pos_) throw FormatError("unexpected end of data (truncated file?)");
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() { std::uint8_t v; bytes(&v, 1); return v; }
  std::uint32_t u32() { std::uint32_t v; bytes(&v, 4); return v; }
  std::uint64_t u64() { std::uint64_t v; bytes(&v, 8); return v; }
  double f64() { double v; bytes(&v, 8); return v; }
  std::string str();
  void f64s(double* p, std::size_t n) { bytes(p, n * sizeof(double)); }
  Eigen::MatrixXd matrix();
  Eigen::VectorXd vector();

  std::size_t remaining() const { return buf_.size() - pos_; }
  void expect_end() const {
    if (remaining() != 0) throw FormatError("trailing bytes after payload");
  }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

/// 64-bit FNV-1a, used for config hashes stored in checkpoints.
std::uint64_t fnv1a64(std::string_view text);

}  // namespace obac
