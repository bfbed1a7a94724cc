#pragma once

// Persistence formats.
//
// TensorFile ("LSCT"): magic, version u8, ndim u8, dims as u32 LE, float32 LE
// row-major payload, CRC32 (IEEE) of the payload as u32 LE.
// Checkpoint tensors use the same layout with magic "LSCD" and a float64
// payload so that resumed runs continue bit-exactly.
//
// Config files are flat `key = value` text; `#` starts a comment.

#include <zlib.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lsc/dynamics.hpp"
#include "lsc/types.hpp"

namespace lsc {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

inline constexpr std::uint8_t kTensorVersion = 1;

template <class Scalar>
struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<Scalar> data;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

inline std::uint32_t crc32_of(const void* data, std::size_t len) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  const auto* p = static_cast<const Bytef*>(data);
  while (len > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(len, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    len -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace detail {

template <class Scalar>
constexpr const char* tensor_magic() {
  return sizeof(Scalar) == 4 ? "LSCT" : "LSCD";
}

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

}  // namespace detail

template <class Scalar>
std::string encode_tensor(const Tensor<Scalar>& t) {
  if (t.dims.size() > 255) throw UsageError("tensor rank exceeds 255");
  if (t.data.size() != t.element_count()) throw DimensionError("tensor payload does not match its dims");
  std::string out(detail::tensor_magic<Scalar>(), 4);
  detail::put<std::uint8_t>(out, kTensorVersion);
  detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
  for (auto d : t.dims) detail::put<std::uint32_t>(out, d);
  const std::size_t payload = t.data.size() * sizeof(Scalar);
  const std::size_t start = out.size();
  out.resize(start + payload);
  if (payload) std::memcpy(out.data() + start, t.data.data(), payload);
  detail::put<std::uint32_t>(out, crc32_of(out.data() + start, payload));
  return out;
}

template <class Scalar>
Tensor<Scalar> decode_tensor(std::string_view bytes) {
  auto fail = [](std::size_t offset, const std::string& what) -> void {
    throw FormatError("malformed tensor file at byte " + std::to_string(offset) + ": " + what);
  };
  std::size_t pos = 0;
  auto need = [&](std::size_t n, const char* what) {
    if (bytes.size() < pos + n) fail(pos, std::string("truncated ") + what);
  };
  need(4, "magic");
  if (bytes.substr(0, 4) != detail::tensor_magic<Scalar>()) fail(0, "bad magic");
  pos = 4;
  need(2, "header");
  const auto version = static_cast<std::uint8_t>(bytes[pos]);
  if (version != kTensorVersion) fail(pos, "unsupported format version " + std::to_string(version));
  const auto ndim = static_cast<std::uint8_t>(bytes[pos + 1]);
  pos += 2;
  Tensor<Scalar> t;
  need(4u * ndim, "dims");
  t.dims.resize(ndim);
  for (auto& d : t.dims) {
    std::memcpy(&d, bytes.data() + pos, 4);
    pos += 4;
  }
  const std::size_t payload = t.element_count() * sizeof(Scalar);
  need(payload, "payload");
  t.data.resize(t.element_count());
  if (payload) std::memcpy(t.data.data(), bytes.data() + pos, payload);
  const std::size_t payload_start = pos;
  pos += payload;
  need(4, "checksum");
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + pos, 4);
  if (stored != crc32_of(bytes.data() + payload_start, payload)) fail(pos, "CRC mismatch");
  pos += 4;
  if (pos != bytes.size()) fail(pos, "trailing bytes");
  return t;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

template <class Scalar>
void write_tensor(const std::filesystem::path& path, const Tensor<Scalar>& t) {
  write_file(path, encode_tensor(t));
}

template <class Scalar>
Tensor<Scalar> read_tensor(const std::filesystem::path& path) {
  return decode_tensor<Scalar>(read_file(path));
}

// Row-major tensor from a matrix (dims = rows, cols).
template <class Scalar>
Tensor<Scalar> to_tensor(const Matrix& m) {
  Tensor<Scalar> t;
  t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.data.resize(static_cast<std::size_t>(m.size()));
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.data[i++] = static_cast<Scalar>(m(r, c));
  }
  return t;
}

template <class Scalar>
Matrix to_matrix(const Tensor<Scalar>& t) {
  if (t.dims.size() != 2) throw FormatError("expected a rank-2 tensor, got rank " + std::to_string(t.dims.size()));
  Matrix m(t.dims[0], t.dims[1]);
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<double>(t.data[i++]);
  }
  return m;
}

// Sample files hold one sample per row (N x D); the library works with D x N.
inline Matrix read_samples(const std::filesystem::path& path) {
  return to_matrix(read_tensor<float>(path)).transpose();
}

inline void write_samples(const std::filesystem::path& path, const Matrix& x) {
  write_tensor(path, to_tensor<float>(x.transpose()));
}

// ---------------------------------------------------------------------------
// key = value text

class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse(std::string_view text, const std::string& origin = "config") {
    KeyValues kv;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      }
      const auto key = trim(trimmed.substr(0, eq));
      if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
      kv.set(key, trim(trimmed.substr(eq + 1)));
    }
    return kv;
  }

  static KeyValues load(const std::filesystem::path& path) { return parse(read_file(path), path.string()); }

  void set(const std::string& key, std::string value) {
    if (!values_.count(key)) order_.push_back(key);
    values_[key] = std::move(value);
  }
  void set(const std::string& key, double v) { set(key, format_double(v)); }
  void set(const std::string& key, std::uint64_t v) { set(key, std::to_string(v)); }
  void set(const std::string& key, bool v) { set(key, std::string(v ? "true" : "false")); }
  void set(const std::string& key, const char* v) { set(key, std::string(v)); }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const { return values_; }
  const std::vector<std::string>& keys() const { return order_; }

  std::string get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required key '" + key + "'");
    return it->second;
  }
  std::string get(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
  }

  double get_double(const std::string& key) const {
    const auto v = get(key);
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    }
  }
  double get_double(const std::string& key, double fallback) const { return has(key) ? get_double(key) : fallback; }

  std::uint64_t get_uint(const std::string& key) const {
    const auto v = get(key);
    try {
      std::size_t used = 0;
      if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
      const auto n = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return n;
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
    }
  }
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const {
    return has(key) ? get_uint(key) : fallback;
  }

  bool get_bool(const std::string& key) const {
    const auto v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
  }
  bool get_bool(const std::string& key, bool fallback) const { return has(key) ? get_bool(key) : fallback; }

  // Keys in insertion order, one per line.
  std::string serialize() const {
    std::string out;
    for (const auto& k : order_) out += k + " = " + values_.at(k) + "\n";
    return out;
  }

  static std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }

 private:
  static std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
  }

  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

// ---------------------------------------------------------------------------
// Trace CSV. Column order is part of the external interface.

inline constexpr const char* kTraceHeader =
    "t,energy_recon,energy_sparse,nl_mse,mean_cosine,pi_hat,u0,sigma,lambda,norm_min,norm_median,norm_max";

inline std::string trace_row(const TraceRecord& r) {
  auto f = [](double v) { return std::isnan(v) ? std::string() : KeyValues::format_double(v); };
  return f(r.t) + "," + f(r.energy_recon) + "," + f(r.energy_sparse) + "," + f(r.nl_mse) + "," + f(r.mean_cosine) +
         "," + f(r.pi_hat) + "," + f(r.u0) + "," + f(r.sigma) + "," + f(r.lambda) + "," + f(r.norm_min) + "," +
         f(r.norm_median) + "," + f(r.norm_max);
}

inline std::string trace_csv(const std::vector<TraceRecord>& rows) {
  std::string out = std::string(kTraceHeader) + "\n";
  for (const auto& r : rows) out += trace_row(r) + "\n";
  return out;
}

inline std::vector<TraceRecord> parse_trace_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kTraceHeader) throw FormatError("trace CSV header mismatch");
  std::vector<TraceRecord> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> v;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      const auto cell = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      v.push_back(cell.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(cell));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (v.size() != 12) throw FormatError("trace CSV row has " + std::to_string(v.size()) + " cells");
    rows.push_back({v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9], v[10], v[11]});
  }
  return rows;
}

}  // namespace lsc
