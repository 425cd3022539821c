#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "vfs3d/geom/types.hpp"

namespace vfs3d::aug {

/// Cell membership for a set of coordinates.
struct GridCells {
  std::vector<std::size_t> kept;     // representative (lowest) index of each cell, ascending
  std::vector<std::size_t> inverse;  // point -> position in `kept`
};

using CellKey = std::array<std::int64_t, 3>;

inline CellKey cell_key(const std::array<double, 3>& p, double cell) {
  return {static_cast<std::int64_t>(std::floor(p[0] / cell)), static_cast<std::int64_t>(std::floor(p[1] / cell)),
          static_cast<std::int64_t>(std::floor(p[2] / cell))};
}

inline GridCells grid_cells(std::span<const std::array<double, 3>> coords, double cell) {
  if (!(cell > 0)) throw ConfigError("grid cell must be positive");
  GridCells out;
  out.inverse.resize(coords.size());
  std::map<CellKey, std::size_t> slot;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    auto [it, fresh] = slot.try_emplace(cell_key(coords[i], cell), out.kept.size());
    if (fresh) out.kept.push_back(i);
    out.inverse[i] = it->second;
  }
  return out;
}

struct GridSampleResult {
  geom::LidarPointCloud cloud;
  std::vector<std::size_t> kept;
  std::vector<std::size_t> inverse;  // original point -> row of `cloud`
};

/// Keeps the lowest-index point of every occupied cubic cell.
inline GridSampleResult grid_sample(const geom::LidarPointCloud& cloud, double cell) {
  const auto coords = cloud.coords();
  GridCells cells = grid_cells(coords, cell);
  GridSampleResult out;
  out.cloud.frame_id = cloud.frame_id;
  out.cloud.points.reserve(cells.kept.size());
  for (auto i : cells.kept) out.cloud.points.push_back(cloud.points[i]);
  if (cloud.labels) {
    out.cloud.labels.emplace();
    out.cloud.labels->reserve(cells.kept.size());
    for (auto i : cells.kept) out.cloud.labels->push_back((*cloud.labels)[i]);
  }
  out.kept = std::move(cells.kept);
  out.inverse = std::move(cells.inverse);
  return out;
}

}  // namespace vfs3d::aug
