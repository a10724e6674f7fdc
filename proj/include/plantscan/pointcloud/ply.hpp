#pragma once

#include <plantscan/core/error.hpp>
#include <plantscan/pointcloud/point_cloud.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace plantscan {

enum class PlyFormat { Ascii, BinaryLittleEndian };

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

/// Vertex-only PLY contents as named scalar columns.
struct PlyTable {
  struct Column {
    std::string name;
    PlyType type = PlyType::Float32;
    std::vector<double> values;
  };
  std::vector<std::string> comments;
  std::vector<Column> columns;

  std::size_t rows() const { return columns.empty() ? 0 : columns.front().values.size(); }

  const Column* find(std::string_view name) const {
    for (const auto& c : columns)
      if (c.name == name) return &c;
    return nullptr;
  }

  const std::vector<double>& at(std::string_view name) const {
    const auto* c = find(name);
    require(c != nullptr, Errc::MissingChannel, "PLY property '" + std::string(name) + "' not present");
    return c->values;
  }

  std::vector<double>& add(std::string name, PlyType type, std::size_t rows) {
    columns.push_back({std::move(name), type, std::vector<double>(rows, 0.0)});
    return columns.back().values;
  }
};

namespace detail {

inline std::string_view ply_type_name(PlyType t) {
  switch (t) {
    case PlyType::Int8: return "char";
    case PlyType::UInt8: return "uchar";
    case PlyType::Int16: return "short";
    case PlyType::UInt16: return "ushort";
    case PlyType::Int32: return "int";
    case PlyType::UInt32: return "uint";
    case PlyType::Float32: return "float";
    case PlyType::Float64: return "double";
  }
  return "float";
}

inline PlyType parse_ply_type(const std::string& s) {
  if (s == "char" || s == "int8") return PlyType::Int8;
  if (s == "uchar" || s == "uint8") return PlyType::UInt8;
  if (s == "short" || s == "int16") return PlyType::Int16;
  if (s == "ushort" || s == "uint16") return PlyType::UInt16;
  if (s == "int" || s == "int32") return PlyType::Int32;
  if (s == "uint" || s == "uint32") return PlyType::UInt32;
  if (s == "float" || s == "float32") return PlyType::Float32;
  if (s == "double" || s == "float64") return PlyType::Float64;
  fail(Errc::IoError, "unknown PLY type '" + s + "'");
}

inline std::size_t ply_type_size(PlyType t) {
  switch (t) {
    case PlyType::Int8:
    case PlyType::UInt8: return 1;
    case PlyType::Int16:
    case PlyType::UInt16: return 2;
    case PlyType::Int32:
    case PlyType::UInt32:
    case PlyType::Float32: return 4;
    case PlyType::Float64: return 8;
  }
  return 4;
}

static_assert(std::endian::native == std::endian::little, "binary PLY I/O assumes a little-endian host");

template <class T>
void put(std::ostream& os, double v) {
  const T x = static_cast<T>(v);
  os.write(reinterpret_cast<const char*>(&x), sizeof(T));
}

template <class T>
double get(const char* p) {
  T x;
  std::memcpy(&x, p, sizeof(T));
  return static_cast<double>(x);
}

inline void write_binary(std::ostream& os, PlyType t, double v) {
  switch (t) {
    case PlyType::Int8: put<std::int8_t>(os, v); break;
    case PlyType::UInt8: put<std::uint8_t>(os, v); break;
    case PlyType::Int16: put<std::int16_t>(os, v); break;
    case PlyType::UInt16: put<std::uint16_t>(os, v); break;
    case PlyType::Int32: put<std::int32_t>(os, v); break;
    case PlyType::UInt32: put<std::uint32_t>(os, v); break;
    case PlyType::Float32: put<float>(os, v); break;
    case PlyType::Float64: put<double>(os, v); break;
  }
}

inline double read_binary(const char* p, PlyType t) {
  switch (t) {
    case PlyType::Int8: return get<std::int8_t>(p);
    case PlyType::UInt8: return get<std::uint8_t>(p);
    case PlyType::Int16: return get<std::int16_t>(p);
    case PlyType::UInt16: return get<std::uint16_t>(p);
    case PlyType::Int32: return get<std::int32_t>(p);
    case PlyType::UInt32: return get<std::uint32_t>(p);
    case PlyType::Float32: return get<float>(p);
    case PlyType::Float64: return get<double>(p);
  }
  return 0;
}

inline void write_ascii(std::ostream& os, PlyType t, double v) {
  switch (t) {
    case PlyType::Float32: os << std::setprecision(9) << static_cast<float>(v); break;
    case PlyType::Float64: os << std::setprecision(17) << v; break;
    default: os << static_cast<long long>(v); break;
  }
}

}  // namespace detail

inline void write_ply(std::ostream& os, const PlyTable& table, PlyFormat format) {
  const std::size_t n = table.rows();
  for (const auto& c : table.columns)
    require(c.values.size() == n, Errc::Precondition, "PLY column '" + c.name + "' has wrong length");
  os << "ply\n"
     << (format == PlyFormat::Ascii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n");
  for (const auto& c : table.comments) os << "comment " << c << '\n';
  os << "element vertex " << n << '\n';
  for (const auto& c : table.columns) os << "property " << detail::ply_type_name(c.type) << ' ' << c.name << '\n';
  os << "end_header\n";
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < table.columns.size(); ++k) {
      const auto& c = table.columns[k];
      if (format == PlyFormat::Ascii) {
        if (k) os << ' ';
        detail::write_ascii(os, c.type, c.values[i]);
      } else {
        detail::write_binary(os, c.type, c.values[i]);
      }
    }
    if (format == PlyFormat::Ascii) os << '\n';
  }
}

inline void write_ply(const std::filesystem::path& path, const PlyTable& table,
                      PlyFormat format = PlyFormat::BinaryLittleEndian) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), Errc::IoError, "cannot open " + path.string() + " for writing");
  write_ply(os, table, format);
  require(static_cast<bool>(os), Errc::IoError, "write failed for " + path.string());
}

/// Reads the vertex element of an ASCII or binary little-endian PLY. Other
/// elements are skipped when they follow the vertex element.
inline PlyTable read_ply(std::istream& is) {
  std::string line;
  require(std::getline(is, line) && line.rfind("ply", 0) == 0, Errc::IoError, "not a PLY stream");
  PlyFormat format = PlyFormat::Ascii;
  PlyTable table;
  std::size_t vertex_count = 0;
  bool in_vertex = false, seen_vertex = false;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "end_header") break;
    if (tok == "format") {
      std::string f;
      ls >> f;
      if (f == "ascii")
        format = PlyFormat::Ascii;
      else if (f == "binary_little_endian")
        format = PlyFormat::BinaryLittleEndian;
      else
        fail(Errc::IoError, "unsupported PLY format '" + f + "'");
    } else if (tok == "comment") {
      table.comments.push_back(line.size() > 8 ? line.substr(8) : "");
    } else if (tok == "element") {
      std::string name;
      std::size_t count = 0;
      ls >> name >> count;
      in_vertex = name == "vertex";
      require(seen_vertex || in_vertex, Errc::IoError, "vertex element must come first");
      if (in_vertex) {
        require(!seen_vertex, Errc::IoError, "duplicate vertex element");
        seen_vertex = true;
        vertex_count = count;
      }
    } else if (tok == "property") {
      if (!in_vertex) continue;
      std::string type, name;
      ls >> type;
      require(type != "list", Errc::IoError, "list properties in vertex element unsupported");
      ls >> name;
      table.columns.push_back({name, detail::parse_ply_type(type), {}});
    }
  }
  require(seen_vertex, Errc::IoError, "PLY has no vertex element");
  for (auto& c : table.columns) c.values.resize(vertex_count);

  if (format == PlyFormat::Ascii) {
    for (std::size_t i = 0; i < vertex_count; ++i)
      for (auto& c : table.columns) {
        std::string tok;
        require(static_cast<bool>(is >> tok), Errc::IoError, "truncated ASCII PLY body");
        c.values[i] = std::strtod(tok.c_str(), nullptr);
      }
  } else {
    std::size_t stride = 0;
    for (const auto& c : table.columns) stride += detail::ply_type_size(c.type);
    std::vector<char> row(stride);
    for (std::size_t i = 0; i < vertex_count; ++i) {
      require(static_cast<bool>(is.read(row.data(), static_cast<std::streamsize>(stride))), Errc::IoError,
              "truncated binary PLY body");
      std::size_t off = 0;
      for (auto& c : table.columns) {
        c.values[i] = detail::read_binary(row.data() + off, c.type);
        off += detail::ply_type_size(c.type);
      }
    }
  }
  return table;
}

inline PlyTable read_ply(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), Errc::IoError, "cannot open " + path.string());
  return read_ply(is);
}

/// Property name for a band channel, e.g. "refl_662.5".
inline std::string band_property(std::string_view prefix, std::size_t band) {
  std::ostringstream os;
  os << prefix << '_' << std::fixed << std::setprecision(1) << band_centers()[band];
  return os.str();
}

/// Standard columns for a cloud: x/y/z, nx/ny/nz, red/green/blue, <prefix>_<nm>.
inline PlyTable to_ply_table(const PointCloud& cloud, std::string_view band_prefix = "refl") {
  PlyTable t;
  const std::size_t n = cloud.size();
  const char* xyz[] = {"x", "y", "z"};
  const char* nxyz[] = {"nx", "ny", "nz"};
  const char* rgb[] = {"red", "green", "blue"};
  for (int a = 0; a < 3; ++a) {
    auto& col = t.add(xyz[a], PlyType::Float64, n);
    for (std::size_t i = 0; i < n; ++i) col[i] = cloud.points[i][a];
  }
  if (cloud.has_normals())
    for (int a = 0; a < 3; ++a) {
      auto& col = t.add(nxyz[a], PlyType::Float32, n);
      for (std::size_t i = 0; i < n; ++i) col[i] = cloud.normals[i][a];
    }
  if (cloud.has_colors())
    for (int a = 0; a < 3; ++a) {
      auto& col = t.add(rgb[a], PlyType::UInt8, n);
      for (std::size_t i = 0; i < n; ++i) col[i] = std::round(std::clamp(cloud.colors[i][a], 0.0, 1.0) * 255.0);
    }
  if (cloud.has_bands())
    for (std::size_t b = 0; b < kBandCount; ++b) {
      auto& col = t.add(band_property(band_prefix, b), PlyType::Float32, n);
      for (std::size_t i = 0; i < n; ++i) col[i] = cloud.bands[i][static_cast<int>(b)];
    }
  return t;
}

inline PointCloud from_ply_table(const PlyTable& t, std::string_view band_prefix = "refl") {
  PointCloud cloud;
  const std::size_t n = t.rows();
  const auto& x = t.at("x");
  const auto& y = t.at("y");
  const auto& z = t.at("z");
  cloud.points.resize(n);
  for (std::size_t i = 0; i < n; ++i) cloud.points[i] = Vec3(x[i], y[i], z[i]);
  if (t.find("nx") && t.find("ny") && t.find("nz")) {
    const auto &nx = t.at("nx"), &ny = t.at("ny"), &nz = t.at("nz");
    cloud.normals.resize(n);
    for (std::size_t i = 0; i < n; ++i) cloud.normals[i] = Vec3(nx[i], ny[i], nz[i]).normalized();
  }
  if (t.find("red") && t.find("green") && t.find("blue")) {
    const auto &r = t.at("red"), &g = t.at("green"), &b = t.at("blue");
    cloud.colors.resize(n);
    for (std::size_t i = 0; i < n; ++i) cloud.colors[i] = Vec3(r[i], g[i], b[i]) / 255.0;
  }
  if (t.find(band_property(band_prefix, 0))) {
    cloud.bands.resize(n);
    for (std::size_t b = 0; b < kBandCount; ++b) {
      const auto& col = t.at(band_property(band_prefix, b));
      for (std::size_t i = 0; i < n; ++i) cloud.bands[i][static_cast<int>(b)] = col[i];
    }
  }
  return cloud;
}

}  // namespace plantscan
