#pragma once

// Dataset serialization.
//
// CSV: a `# schema=v1` line, the header `y,x1,...,xp`, one row per observation.
//
// Binary (little-endian, float64 column-major):
//   offset  size      field
//   0       8         magic "UNLRNDS\0"
//   8       4         uint32 version (= 1)
//   12      4         uint32 flags (bit 0: beta_star present)
//   16      8         uint64 n
//   24      8         uint64 p
//   32      8n        y
//   32+8n   8np       X, column-major
//   ...     8p        beta_star (only if flag bit 0)

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "unlearn/dataset.hpp"
#include "unlearn/errors.hpp"

namespace unlearn::io {

static_assert(std::endian::native == std::endian::little,
              "binary dataset format assumes a little-endian host");

inline constexpr std::array<char, 8> dataset_magic{'U', 'N', 'L', 'R', 'N', 'D', 'S', '\0'};
inline constexpr std::uint32_t dataset_version = 1;

/// Shortest round-trip decimal representation.
inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{}) throw io_error("format_double failed");
  return std::string(buf.data(), ptr);
}

inline double parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw io_error("cannot parse number '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

/// First line of every CSV this library writes.
inline constexpr std::string_view csv_schema_line = "# schema=v1";

inline std::string_view detail_trim_cr(std::string_view s) {
  return !s.empty() && s.back() == '\r' ? s.substr(0, s.size() - 1) : s;
}

inline void write_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw io_error("cannot open " + path.string() + " for writing");
  os << csv_schema_line << '\n' << "y";
  for (std::size_t j = 1; j <= d.p(); ++j) os << ",x" << j;
  os << '\n';
  for (Eigen::Index i = 0; i < d.X.rows(); ++i) {
    os << format_double(d.y[i]);
    for (Eigen::Index j = 0; j < d.X.cols(); ++j) os << ',' << format_double(d.X(i, j));
    os << '\n';
  }
  if (!os) throw io_error("write failed: " + path.string());
}

inline Dataset read_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw io_error("empty CSV: " + path.string());
  if (line.starts_with("# schema=")) {
    if (detail_trim_cr(line) != csv_schema_line) throw schema_error("unsupported CSV schema: " + line);
    if (!std::getline(is, line)) throw io_error("CSV has no header: " + path.string());
  }
  auto header = split(line);
  if (header.empty() || header[0] != "y") throw schema_error("CSV header must start with 'y'");
  const std::size_t p = header.size() - 1;
  for (std::size_t j = 1; j <= p; ++j) {
    auto h = header[j];
    if (!h.empty() && h.back() == '\r') h.remove_suffix(1);
    if (h != "x" + std::to_string(j)) throw schema_error("CSV header column " + std::to_string(j) + " must be x" + std::to_string(j));
  }
  std::vector<double> ys;
  std::vector<double> xs;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    auto cells = split(line);
    if (cells.size() != p + 1) throw schema_error("CSV row has wrong number of columns");
    ys.push_back(parse_double(cells[0]));
    for (std::size_t j = 1; j <= p; ++j) xs.push_back(parse_double(cells[j]));
  }
  Dataset d;
  const auto n = static_cast<Eigen::Index>(ys.size());
  d.y = Eigen::Map<Eigen::VectorXd>(ys.data(), n);
  d.X = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      xs.data(), n, static_cast<Eigen::Index>(p));
  d.validate();
  return d;
}

namespace detail {
template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw io_error("truncated binary dataset");
  return v;
}
inline void read_doubles(std::istream& is, double* dst, std::size_t count) {
  if (!is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(count * sizeof(double))))
    throw io_error("truncated binary dataset");
}
}  // namespace detail

inline void write_binary(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open " + path.string() + " for writing");
  os.write(dataset_magic.data(), dataset_magic.size());
  detail::put(os, dataset_version);
  detail::put(os, static_cast<std::uint32_t>(d.beta_star ? 1u : 0u));
  detail::put(os, static_cast<std::uint64_t>(d.n()));
  detail::put(os, static_cast<std::uint64_t>(d.p()));
  os.write(reinterpret_cast<const char*>(d.y.data()), static_cast<std::streamsize>(d.n() * sizeof(double)));
  // Eigen's default storage is column-major, matching the on-disk layout
  os.write(reinterpret_cast<const char*>(d.X.data()),
           static_cast<std::streamsize>(d.n() * d.p() * sizeof(double)));
  if (d.beta_star)
    os.write(reinterpret_cast<const char*>(d.beta_star->data()),
             static_cast<std::streamsize>(d.p() * sizeof(double)));
  if (!os) throw io_error("write failed: " + path.string());
}

inline Dataset read_binary(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open " + path.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != dataset_magic)
    throw schema_error("bad magic in " + path.string());
  const auto version = detail::get<std::uint32_t>(is);
  if (version != dataset_version)
    throw schema_error("unsupported dataset version " + std::to_string(version));
  const auto flags = detail::get<std::uint32_t>(is);
  const auto n = detail::get<std::uint64_t>(is);
  const auto p = detail::get<std::uint64_t>(is);
  Dataset d;
  d.y.resize(static_cast<Eigen::Index>(n));
  d.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  detail::read_doubles(is, d.y.data(), n);
  detail::read_doubles(is, d.X.data(), n * p);
  if (flags & 1u) {
    Eigen::VectorXd b(static_cast<Eigen::Index>(p));
    detail::read_doubles(is, b.data(), p);
    d.beta_star = std::move(b);
  }
  d.validate();
  return d;
}

/// Picks the format from the extension: `.csv` or anything else as binary.
inline void write_dataset(const Dataset& d, const std::filesystem::path& path) {
  if (path.extension() == ".csv") write_csv(d, path);
  else write_binary(d, path);
}

inline Dataset read_dataset(const std::filesystem::path& path) {
  if (path.extension() == ".csv") return read_csv(path);
  return read_binary(path);
}

}  // namespace unlearn::io
