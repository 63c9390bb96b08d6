#include <fstream>
#include <iterator>
#include <sstream>

#include "obac/errors.hpp"
#include "obac/rng.hpp"
#include "obac/serialization.hpp"

namespace obac {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::state: return "state";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::lookup: return "lookup";
    case ErrorKind::coverage: return "coverage";
    case ErrorKind::internal: return "internal";
  }
  return "unknown";
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_ << ' ' << normal_;
  return os.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream is(state);
  is >> engine_ >> normal_;
  if (!is) throw FormatError("corrupt RNG state");
}

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void BinaryWriter::matrix(const Eigen::MatrixXd& m) {
  u64(static_cast<std::uint64_t>(m.rows()));
  u64(static_cast<std::uint64_t>(m.cols()));
  f64s(m.data(), static_cast<std::size_t>(m.size()));
}

void BinaryWriter::vector(const Eigen::VectorXd& v) {
  u64(static_cast<std::uint64_t>(v.size()));
  f64s(v.data(), static_cast<std::size_t>(v.size()));
}

void BinaryWriter::write_file(const std::string& path) const {
  // Write to a sibling temp file first so a failed write never leaves a
  // half-written file under the final name.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw IoError("write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move '" + tmp + "' to '" + path + "'");
}

BinaryReader BinaryReader::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return BinaryReader(std::move(data));
}

std::string BinaryReader::str() {
  const auto n = u64();
  if (n > remaining()) throw FormatError("string length exceeds remaining data");
  std::string s(n, '\0');
  bytes(s.data(), n);
  return s;
}

Eigen::MatrixXd BinaryReader::matrix() {
  const auto rows = u64();
  const auto cols = u64();
  if (cols != 0 && rows > remaining() / 8 / cols) throw FormatError("matrix size exceeds remaining data");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  f64s(m.data(), rows * cols);
  return m;
}

Eigen::VectorXd BinaryReader::vector() {
  const auto n = u64();
  if (n > remaining() / 8) throw FormatError("vector size exceeds remaining data");
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  f64s(v.data(), n);
  return v;
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace obac
