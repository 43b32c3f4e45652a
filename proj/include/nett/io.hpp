#pragma once
/*
 * File formats.
 *
 * NETT grid file (Image or Sinogram), all integers little-endian:
 *   "NETT" | u32 version = 1 | u32 kind (0 image, 1 sinogram) | u32 dim0 | u32 dim1 |
 *   dim0*dim1 IEEE-754 doubles, little-endian, row-major.
 * dim0 is rows (image height / sensor count), dim1 is cols.
 *
 * key=value text: one pair per line, '#' starts a comment, blank lines ignored.
 */

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "nett/error.hpp"
#include "nett/grid.hpp"

namespace nett {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace io_detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw FormatError("unexpected end of file");
  return v;
}
inline void write_f64s(std::ostream& os, std::span<const double> v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}
inline std::vector<double> read_f64s(std::istream& is, std::size_t n) {
  std::vector<double> v(n);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw FormatError("unexpected end of file in value block");
  return v;
}

template <class Tag>
constexpr std::uint32_t grid_kind() {
  if constexpr (std::is_same_v<Tag, ImageTag>)
    return 0;
  else
    return 1;
}

}  // namespace io_detail

inline constexpr std::uint32_t kGridFormatVersion = 1;

template <class Tag>
void write_grid(std::ostream& os, const Grid<Tag>& g) {
  os.write("NETT", 4);
  io_detail::write_u32(os, kGridFormatVersion);
  io_detail::write_u32(os, io_detail::grid_kind<Tag>());
  io_detail::write_u32(os, static_cast<std::uint32_t>(g.rows()));
  io_detail::write_u32(os, static_cast<std::uint32_t>(g.cols()));
  io_detail::write_f64s(os, g.values());
}

template <class Tag>
Grid<Tag> read_grid(std::istream& is) {
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "NETT", 4) != 0) throw FormatError("bad magic, expected NETT");
  const auto version = io_detail::read_u32(is);
  if (version != kGridFormatVersion)
    throw FormatError("unsupported NETT grid version " + std::to_string(version));
  const auto kind = io_detail::read_u32(is);
  if (kind != io_detail::grid_kind<Tag>())
    throw FormatError("grid kind " + std::to_string(kind) + " does not match requested type");
  const auto d0 = io_detail::read_u32(is);
  const auto d1 = io_detail::read_u32(is);
  if (d0 == 0 || d1 == 0) throw FormatError("zero grid dimension");
  auto values = io_detail::read_f64s(is, std::size_t{d0} * d1);
  Grid<Tag> g(d0, d1, std::move(values));
  if (!g.all_finite()) throw FormatError("grid file contains non-finite values");
  return g;
}

template <class Tag>
void save_grid(const std::filesystem::path& path, const Grid<Tag>& g) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open for writing: " + path.string());
  write_grid(os, g);
  if (!os) throw FormatError("write failed: " + path.string());
}

inline Image load_image(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open: " + path.string());
  return read_grid<ImageTag>(is);
}

inline Sinogram load_sinogram(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open: " + path.string());
  return read_grid<SinogramTag>(is);
}

/// Binary PGM (P5), 8-bit, linear min-max scaling. A constant grid maps to 0.
template <class Tag>
void save_pgm(const std::filesystem::path& path, const Grid<Tag>& g) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open for writing: " + path.string());
  const auto [lo_it, hi_it] = std::minmax_element(g.values().begin(), g.values().end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  os << "P5\n" << g.cols() << ' ' << g.rows() << "\n255\n";
  std::vector<unsigned char> bytes(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double t = range > 0.0 ? (g[i] - lo) / range : 0.0;
    bytes[i] = static_cast<unsigned char>(std::clamp(std::lround(t * 255.0), 0L, 255L));
  }
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// Ordered key=value map. Keys are case-sensitive; duplicate keys are an error.
class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse(std::istream& is) {
    KeyValues kv;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw FormatError("line " + std::to_string(lineno) + ": expected key=value");
      const auto key = trim(trimmed.substr(0, eq));
      const auto value = trim(trimmed.substr(eq + 1));
      if (key.empty()) throw FormatError("line " + std::to_string(lineno) + ": empty key");
      if (kv.map_.count(key)) throw FormatError("duplicate key '" + key + "'");
      kv.set(key, value);
    }
    return kv;
  }

  static KeyValues parse(const std::string& text) {
    std::istringstream is(text);
    return parse(is);
  }

  static KeyValues load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open: " + path.string());
    return parse(is);
  }

  void set(const std::string& key, const std::string& value) {
    if (!map_.count(key)) order_.push_back(key);
    map_[key] = value;
  }
  bool has(const std::string& key) const { return map_.count(key) != 0; }
  const std::string& get(const std::string& key) const {
    auto it = map_.find(key);
    if (it == map_.end()) throw FormatError("missing key '" + key + "'");
    return it->second;
  }
  std::string get_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
  }
  double get_double(const std::string& key, double fallback) const {
    return has(key) ? to_double(key, get(key)) : fallback;
  }
  long long get_int(const std::string& key, long long fallback) const {
    return has(key) ? to_int(key, get(key)) : fallback;
  }
  const std::vector<std::string>& keys() const noexcept { return order_; }

  /// Throws on any key outside `allowed`.
  void require_known(const std::vector<std::string>& allowed) const {
    for (const auto& k : order_)
      if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
        throw FormatError("unknown key '" + k + "'");
  }

  std::string to_string() const {
    std::ostringstream os;
    for (const auto& k : order_) os << k << '=' << map_.at(k) << '\n';
    return os.str();
  }

  static double to_double(const std::string& key, const std::string& s) {
    std::size_t pos = 0;
    double v = 0;
    try {
      v = std::stod(s, &pos);
    } catch (const std::exception&) {
      throw FormatError("key '" + key + "': not a number: " + s);
    }
    if (pos != s.size()) throw FormatError("key '" + key + "': trailing characters in " + s);
    return v;
  }
  static long long to_int(const std::string& key, const std::string& s) {
    std::size_t pos = 0;
    long long v = 0;
    try {
      v = std::stoll(s, &pos);
    } catch (const std::exception&) {
      throw FormatError("key '" + key + "': not an integer: " + s);
    }
    if (pos != s.size()) throw FormatError("key '" + key + "': trailing characters in " + s);
    return v;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> map_;
  std::vector<std::string> order_;
};

/// "1,2,3" -> {1,2,3}. Empty string gives an empty list.
template <class T>
std::vector<T> parse_list(const std::string& s) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    if constexpr (std::is_floating_point_v<T>)
      out.push_back(static_cast<T>(KeyValues::to_double("list", item)));
    else
      out.push_back(static_cast<T>(KeyValues::to_int("list", item)));
  }
  return out;
}

template <class T>
std::string join_list(const std::vector<T>& v) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

/// FNV-1a over raw bytes; used for golden-value regression checks and manifests.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t hash_values(std::span<const double> v) {
  return fnv1a(v.data(), v.size() * sizeof(double));
}

}  // namespace nett
