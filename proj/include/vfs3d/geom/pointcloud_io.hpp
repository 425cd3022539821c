#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "vfs3d/core/binary_io.hpp"
#include "vfs3d/geom/types.hpp"

namespace vfs3d::geom {

// "VFS3PC\0\0" | u32 version=1 | u32 N | u8 has_labels |
// N x (x, y, z, intensity, elongation) f32 | [N x u16 labels]
inline constexpr char kPointCloudMagic[8] = {'V', 'F', 'S', '3', 'P', 'C', '\0', '\0'};
inline constexpr std::uint32_t kPointCloudVersion = 1;

inline void write_point_cloud(std::ostream& os, const LidarPointCloud& cloud) {
  os.write(kPointCloudMagic, sizeof(kPointCloudMagic));
  io::write_le<std::uint32_t>(os, kPointCloudVersion);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(cloud.size()));
  io::write_le<std::uint8_t>(os, cloud.has_labels() ? 1 : 0);
  for (const auto& p : cloud.points)
    for (double v : {p.x, p.y, p.z, p.intensity, p.elongation}) io::write_le<float>(os, static_cast<float>(v));
  if (cloud.labels)
    for (auto l : *cloud.labels) io::write_le<std::uint16_t>(os, l);
}

inline LidarPointCloud read_point_cloud(std::istream& is) {
  if (io::read_bytes(is, 8) != std::string(kPointCloudMagic, 8)) throw IoError("bad point cloud magic");
  if (io::read_le<std::uint32_t>(is) != kPointCloudVersion) throw IoError("unsupported point cloud version");
  const auto n = io::read_le<std::uint32_t>(is);
  const auto has_labels = io::read_le<std::uint8_t>(is);
  if (has_labels > 1) throw IoError("bad has_labels flag");
  LidarPointCloud cloud;
  cloud.points.resize(n);
  for (auto& p : cloud.points) {
    p.x = io::read_le<float>(is);
    p.y = io::read_le<float>(is);
    p.z = io::read_le<float>(is);
    p.intensity = io::read_le<float>(is);
    p.elongation = io::read_le<float>(is);
  }
  if (has_labels) {
    cloud.labels.emplace(n);
    for (auto& l : *cloud.labels) l = io::read_le<std::uint16_t>(is);
  }
  return cloud;
}

inline void save_point_cloud(const std::filesystem::path& path, const LidarPointCloud& cloud) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  write_point_cloud(os, cloud);
}

inline LidarPointCloud load_point_cloud(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  auto cloud = read_point_cloud(is);
  cloud.frame_id = path.stem().string();
  return cloud;
}

}  // namespace vfs3d::geom
