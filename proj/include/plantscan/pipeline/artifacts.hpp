#pragma once

#include <plantscan/calib/calib.hpp>
#include <plantscan/core/error.hpp>
#include <plantscan/lightfield/render.hpp>

#include <openssl/evp.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

namespace plantscan {

static_assert(std::endian::native == std::endian::little, "frame files are written little-endian");

/// Lowercase hex SHA-256 of a byte string.
inline std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    fail(Errc::IoError, "SHA-256 digest failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out(2 * len, '0');
  for (unsigned int i = 0; i < len; ++i) {
    out[2 * i] = hex[md[i] >> 4];
    out[2 * i + 1] = hex[md[i] & 15];
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(Errc::IoError, "cannot read '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) fail(Errc::IoError, "cannot write '" + path.string() + "'");
}

// ----------------------------------------------------------- binary frames

namespace detail {

class ByteWriter {
 public:
  template <class T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  template <class T>
  void put_array(const std::vector<T>& v) {
    put<std::uint64_t>(v.size());
    if (!v.empty()) buf_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(T));
  }
  template <class V>
  void put_eigen_array(const std::vector<V>& v) {
    put<std::uint64_t>(v.size());
    for (const auto& x : v) buf_.append(reinterpret_cast<const char*>(x.data()), sizeof(double) * V::SizeAtCompileTime);
  }
  void put_raw(std::string_view s) { buf_.append(s); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string bytes, std::string source) : buf_(std::move(bytes)), source_(std::move(source)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  template <class T>
  std::vector<T> get_array() {
    const auto n = get<std::uint64_t>();
    need(n * sizeof(T));
    std::vector<T> v(n);
    if (n) std::memcpy(v.data(), buf_.data() + pos_, n * sizeof(T));
    pos_ += n * sizeof(T);
    return v;
  }
  template <class V>
  std::vector<V> get_eigen_array() {
    const auto n = get<std::uint64_t>();
    const std::size_t each = sizeof(double) * V::SizeAtCompileTime;
    need(n * each);
    std::vector<V> v(n);
    for (auto& x : v) {
      std::memcpy(x.data(), buf_.data() + pos_, each);
      pos_ += each;
    }
    return v;
  }
  void expect(std::string_view magic) {
    need(magic.size());
    if (std::string_view(buf_).substr(pos_, magic.size()) != magic)
      fail(Errc::IoError, "'" + source_ + "' is not a " + std::string(magic.substr(0, magic.size() - 1)) + " file");
    pos_ += magic.size();
  }
  void finish() const {
    if (pos_ != buf_.size()) fail(Errc::IoError, "'" + source_ + "' has trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) fail(Errc::IoError, "'" + source_ + "' is truncated");
  }
  std::string buf_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline void put_camera_view(ByteWriter& w, const CameraIntrinsics& k, const Viewpoint& v) {
  w.put<std::int32_t>(k.width);
  w.put<std::int32_t>(k.height);
  for (double x : {k.fx, k.fy, k.cx, k.cy}) w.put(x);
  w.put<std::int32_t>(v.id);
  w.put<std::int32_t>(static_cast<std::int32_t>(v.kind));
  for (int i = 0; i < 3; ++i) w.put(v.position[i]);
  for (int i = 0; i < 9; ++i) w.put(v.frame(i % 3, i / 3));
  w.put(v.sight_distance);
}

inline void get_camera_view(ByteReader& r, CameraIntrinsics& k, Viewpoint& v) {
  k.width = r.get<std::int32_t>();
  k.height = r.get<std::int32_t>();
  k.fx = r.get<double>();
  k.fy = r.get<double>();
  k.cx = r.get<double>();
  k.cy = r.get<double>();
  v.id = r.get<std::int32_t>();
  v.kind = static_cast<ViewKind>(r.get<std::int32_t>());
  for (int i = 0; i < 3; ++i) v.position[i] = r.get<double>();
  for (int i = 0; i < 9; ++i) v.frame(i % 3, i / 3) = r.get<double>();
  v.sight_distance = r.get<double>();
}

inline constexpr std::string_view kDnMagic = "PSDNFRAME1\n";
inline constexpr std::string_view kReflMagic = "PSREFLFRAME1\n";

}  // namespace detail

/// Lossless binary image of a rendered frame.
inline std::string encode_frame(const DnFrame& f) {
  detail::ByteWriter w;
  w.put_raw(detail::kDnMagic);
  detail::put_camera_view(w, f.camera, f.viewpoint);
  w.put_eigen_array(f.dn);
  w.put_array(f.depth);
  w.put_eigen_array(f.normals);
  w.put_array(f.mask);
  w.put_array(f.point_index);
  return w.bytes();
}

inline DnFrame decode_frame(std::string bytes, const std::string& source = "frame") {
  detail::ByteReader r(std::move(bytes), source);
  r.expect(detail::kDnMagic);
  DnFrame f;
  detail::get_camera_view(r, f.camera, f.viewpoint);
  f.dn = r.get_eigen_array<Spectrum>();
  f.depth = r.get_array<double>();
  f.normals = r.get_eigen_array<Vec3>();
  f.mask = r.get_array<PixelLabel>();
  f.point_index = r.get_array<std::int64_t>();
  r.finish();
  const std::size_t n = f.mask.size();
  require(n == f.camera.pixel_count() && f.point_index.size() == n && (f.dn.empty() || f.dn.size() == n) &&
              (f.depth.empty() || f.depth.size() == n) && (f.normals.empty() || f.normals.size() == n),
          Errc::IoError, "'" + source + "' has inconsistent channel sizes");
  return f;
}

inline std::string encode_reflectance(const ReflectanceFrame& f) {
  detail::ByteWriter w;
  w.put_raw(detail::kReflMagic);
  w.put<std::int32_t>(static_cast<std::int32_t>(f.provenance));
  detail::put_camera_view(w, f.camera, f.viewpoint);
  w.put_eigen_array(f.reflectance);
  w.put_array(f.valid);
  w.put_array(f.mask);
  w.put_array(f.depth);
  w.put_eigen_array(f.normals);
  w.put_array(f.point_index);
  return w.bytes();
}

inline ReflectanceFrame decode_reflectance(std::string bytes, const std::string& source = "reflectance frame") {
  detail::ByteReader r(std::move(bytes), source);
  r.expect(detail::kReflMagic);
  ReflectanceFrame f;
  f.provenance = static_cast<Provenance>(r.get<std::int32_t>());
  detail::get_camera_view(r, f.camera, f.viewpoint);
  f.reflectance = r.get_eigen_array<Spectrum>();
  f.valid = r.get_array<std::uint8_t>();
  f.mask = r.get_array<PixelLabel>();
  f.depth = r.get_array<double>();
  f.normals = r.get_eigen_array<Vec3>();
  f.point_index = r.get_array<std::int64_t>();
  r.finish();
  const std::size_t n = f.reflectance.size();
  require(n == f.camera.pixel_count() && f.valid.size() == n && f.mask.size() == n, Errc::IoError,
          "'" + source + "' has inconsistent channel sizes");
  return f;
}

inline DnFrame load_frame(const std::filesystem::path& p) { return decode_frame(read_file(p), p.string()); }
inline ReflectanceFrame load_reflectance(const std::filesystem::path& p) {
  return decode_reflectance(read_file(p), p.string());
}

}  // namespace plantscan
