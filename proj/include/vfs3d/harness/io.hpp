#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "vfs3d/core/binary_io.hpp"
#include "vfs3d/core/kv.hpp"
#include "vfs3d/geom/camera.hpp"
#include "vfs3d/geom/types.hpp"

namespace vfs3d::harness {

// Colour images as PFM (float32, little-endian, bottom row first); label
// images as 8-bit binary PGM.

inline void save_pfm(const std::filesystem::path& path, const geom::Image& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "PF\n" << img.width << ' ' << img.height << "\n-1.0\n";
  for (int y = img.height - 1; y >= 0; --y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) io::write_le<float>(os, static_cast<float>(img.at(y, x, c)));
  if (!os) throw IoError("failed writing " + path.string());
}

namespace detail {

inline std::string read_token(std::istream& is) {
  std::string tok;
  if (!(is >> tok)) throw IoError("truncated image header");
  return tok;
}

}  // namespace detail

inline geom::Image load_pfm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  if (detail::read_token(is) != "PF") throw IoError(path.string() + ": not a colour PFM file");
  const int w = std::stoi(detail::read_token(is)), h = std::stoi(detail::read_token(is));
  const double scale = std::stod(detail::read_token(is));
  if (scale >= 0) throw IoError(path.string() + ": big-endian PFM is not supported");
  is.get();
  geom::Image img(h, w);
  for (int y = h - 1; y >= 0; --y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = io::read_le<float>(is);
  return img;
}

inline void save_pgm(const std::filesystem::path& path, const geom::LabelImage& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  for (auto v : img.data) {
    if (v > 255) throw IoError("label " + std::to_string(v) + " does not fit an 8-bit PGM");
    os.put(static_cast<char>(v));
  }
}

inline geom::LabelImage load_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  if (detail::read_token(is) != "P5") throw IoError(path.string() + ": not a binary PGM file");
  const int w = std::stoi(detail::read_token(is)), h = std::stoi(detail::read_token(is));
  if (std::stoi(detail::read_token(is)) != 255) throw IoError(path.string() + ": only 8-bit PGM is supported");
  is.get();
  geom::LabelImage img(h, w);
  for (auto& v : img.data) {
    const int c = is.get();
    if (c == EOF) throw IoError(path.string() + ": truncated pixel data");
    v = static_cast<std::uint16_t>(c);
  }
  return img;
}

/// Rig description: one [camera.NAME] section per camera with intrinsics,
/// image size and the LiDAR->camera extrinsic (rotation row-major).
inline std::string dump_rig(const std::vector<geom::CameraModel>& cams) {
  std::ostringstream os;
  for (const auto& c : cams) {
    os << "[camera." << geom::to_string(c.name) << "]\n";
    os << "fx = " << kv::format_double(c.fx) << "\nfy = " << kv::format_double(c.fy) << '\n';
    os << "cx = " << kv::format_double(c.cx) << "\ncy = " << kv::format_double(c.cy) << '\n';
    os << "width = " << c.width << "\nheight = " << c.height << '\n';
    std::vector<double> r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.push_back(c.rotation(i, j));
    os << "rotation = " << kv::join_doubles(r) << '\n';
    os << "translation = "
       << kv::join_doubles(std::vector<double>{c.translation.x(), c.translation.y(), c.translation.z()}) << "\n\n";
  }
  return os.str();
}

inline std::vector<geom::CameraModel> parse_rig(std::string_view text) {
  std::vector<geom::CameraModel> cams;
  for (const auto& sec : kv::parse(text)) {
    if (sec.name.empty()) {
      if (!sec.entries.empty()) throw ConfigError("rig: key outside a [camera.NAME] section");
      continue;
    }
    if (!sec.name.starts_with("camera.")) throw ConfigError("rig: unknown section [" + sec.name + "]");
    geom::CameraModel c;
    c.name = geom::parse_camera_name(sec.name.substr(7));
    std::set<std::string> seen;
    for (const auto& e : sec.entries) {
      const std::string what = sec.name + "." + e.key;
      if (!seen.insert(e.key).second) throw ConfigError("rig: duplicate key " + what);
      if (e.key == "fx") c.fx = kv::parse_double(e.value, what);
      else if (e.key == "fy") c.fy = kv::parse_double(e.value, what);
      else if (e.key == "cx") c.cx = kv::parse_double(e.value, what);
      else if (e.key == "cy") c.cy = kv::parse_double(e.value, what);
      else if (e.key == "width") c.width = static_cast<int>(kv::parse_int(e.value, what));
      else if (e.key == "height") c.height = static_cast<int>(kv::parse_int(e.value, what));
      else if (e.key == "rotation") {
        const auto v = kv::parse_doubles(e.value, what);
        if (v.size() != 9) throw ConfigError(what + ": expected 9 values");
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j) c.rotation(i, j) = v[static_cast<std::size_t>(i * 3 + j)];
      } else if (e.key == "translation") {
        const auto v = kv::parse_doubles(e.value, what);
        if (v.size() != 3) throw ConfigError(what + ": expected 3 values");
        c.translation = Eigen::Vector3d(v[0], v[1], v[2]);
      } else {
        throw ConfigError("rig: unknown key " + what);
      }
    }
    c.validate();
    cams.push_back(c);
  }
  return cams;
}

}  // namespace vfs3d::harness
