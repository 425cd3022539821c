#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vfs3d/core/error.hpp"
#include "vfs3d/geom/types.hpp"

namespace vfs3d::curves {

enum class CurveKind { z, z_trans, hilbert, hilbert_trans };

inline constexpr std::array<CurveKind, 4> kAllCurves{CurveKind::z, CurveKind::z_trans, CurveKind::hilbert,
                                                     CurveKind::hilbert_trans};

inline std::string_view to_string(CurveKind k) {
  switch (k) {
    case CurveKind::z: return "z";
    case CurveKind::z_trans: return "z-trans";
    case CurveKind::hilbert: return "hilbert";
    case CurveKind::hilbert_trans: return "hilbert-trans";
  }
  return "?";
}

inline CurveKind parse_curve_kind(std::string_view s) {
  for (auto k : kAllCurves)
    if (to_string(k) == s) return k;
  throw ConfigError("unknown curve kind '" + std::string(s) + "'");
}

inline constexpr int kMaxBitsPerAxis = 21;

using Cell = std::array<std::uint32_t, 3>;

struct CurveCode {
  std::uint64_t code = 0;
  int bits_per_axis = 1;
  CurveKind kind = CurveKind::z;

  bool operator==(const CurveCode&) const = default;
};

/// Uniform cubic grid used to discretize coordinates before encoding.
struct GridSpec {
  std::array<double, 3> origin{-75.2, -75.2, -4.0};
  double cell = 0.1;
  int bits_per_axis = 11;

  void validate() const {
    if (!(cell > 0)) throw ConfigError("grid cell must be positive");
    if (bits_per_axis < 1 || bits_per_axis > kMaxBitsPerAxis)
      throw ConfigError("bits_per_axis must be in [1, 21]");
  }

  bool covers(const geom::RangeBox& box) const {
    const double span = std::ldexp(cell, bits_per_axis);
    for (int k = 0; k < 3; ++k)
      if (origin[k] > box.min[k] || origin[k] + span < box.max[k]) return false;
    return true;
  }

  static GridSpec for_range(const geom::RangeBox& box, double cell, int bits) {
    GridSpec g{box.min, cell, bits};
    g.validate();
    if (!g.covers(box)) throw ConfigError("grid with the requested bits does not cover the range box");
    return g;
  }
};

namespace detail {

inline void check_cell(const Cell& c, int bits) {
  require(bits >= 1 && bits <= kMaxBitsPerAxis, "bits_per_axis out of [1, 21]");
  const std::uint64_t limit = std::uint64_t{1} << bits;
  for (auto v : c) require(v < limit, "cell index exceeds 2^bits - 1");
}

// Skilling's in-place conversion between axes and the transposed Hilbert index.
inline void axes_to_transpose(Cell& x, int bits) {
  const std::uint32_t m = std::uint32_t{1} << (bits - 1);
  for (std::uint32_t q = m; q > 1; q >>= 1) {
    const std::uint32_t p = q - 1;
    for (int i = 0; i < 3; ++i) {
      if (x[i] & q) {
        x[0] ^= p;
      } else {
        const std::uint32_t t = (x[0] ^ x[i]) & p;
        x[0] ^= t;
        x[i] ^= t;
      }
    }
  }
  for (int i = 1; i < 3; ++i) x[i] ^= x[i - 1];
  std::uint32_t t = 0;
  for (std::uint32_t q = m; q > 1; q >>= 1)
    if (x[2] & q) t ^= q - 1;
  for (int i = 0; i < 3; ++i) x[i] ^= t;
}

inline void transpose_to_axes(Cell& x, int bits) {
  const std::uint32_t n = std::uint32_t{2} << (bits - 1);
  std::uint32_t t = x[2] >> 1;
  for (int i = 2; i > 0; --i) x[i] ^= x[i - 1];
  x[0] ^= t;
  for (std::uint32_t q = 2; q != n; q <<= 1) {
    const std::uint32_t p = q - 1;
    for (int i = 2; i >= 0; --i) {
      if (x[i] & q) {
        x[0] ^= p;
      } else {
        t = (x[0] ^ x[i]) & p;
        x[0] ^= t;
        x[i] ^= t;
      }
    }
  }
}

}  // namespace detail

inline Cell quantize(const std::array<double, 3>& p, const GridSpec& grid) {
  const double hi = std::ldexp(1.0, grid.bits_per_axis) - 1.0;
  Cell out{};
  for (int k = 0; k < 3; ++k) {
    const double f = std::floor((p[k] - grid.origin[k]) / grid.cell);
    out[k] = static_cast<std::uint32_t>(std::clamp(f, 0.0, hi));
  }
  return out;
}

inline constexpr Cell apply_trans(const Cell& c) { return {c[1], c[0], c[2]}; }

/// x bit i -> code bit 3i, y -> 3i+1, z -> 3i+2.
inline CurveCode morton_encode(const Cell& c, int bits) {
  detail::check_cell(c, bits);
  std::uint64_t code = 0;
  for (int i = 0; i < bits; ++i)
    for (int a = 0; a < 3; ++a) code |= static_cast<std::uint64_t>((c[a] >> i) & 1U) << (3 * i + a);
  return {code, bits, CurveKind::z};
}

inline Cell morton_decode(const CurveCode& code) {
  Cell c{};
  for (int i = 0; i < code.bits_per_axis; ++i)
    for (int a = 0; a < 3; ++a) c[a] |= static_cast<std::uint32_t>((code.code >> (3 * i + a)) & 1U) << i;
  return c;
}

inline CurveCode hilbert_encode(const Cell& c, int bits) {
  detail::check_cell(c, bits);
  Cell x = c;
  detail::axes_to_transpose(x, bits);
  std::uint64_t code = 0;
  for (int b = bits - 1; b >= 0; --b)
    for (int a = 0; a < 3; ++a) code = (code << 1) | ((x[a] >> b) & 1U);
  return {code, bits, CurveKind::hilbert};
}

inline Cell hilbert_decode(const CurveCode& code) {
  const int bits = code.bits_per_axis;
  Cell x{};
  int shift = 3 * bits - 1;
  for (int b = bits - 1; b >= 0; --b)
    for (int a = 0; a < 3; ++a, --shift) x[a] |= static_cast<std::uint32_t>((code.code >> shift) & 1U) << b;
  detail::transpose_to_axes(x, bits);
  return x;
}

inline CurveCode encode(const Cell& c, int bits, CurveKind kind) {
  switch (kind) {
    case CurveKind::z: return morton_encode(c, bits);
    case CurveKind::z_trans: {
      auto code = morton_encode(apply_trans(c), bits);
      code.kind = kind;
      return code;
    }
    case CurveKind::hilbert: return hilbert_encode(c, bits);
    case CurveKind::hilbert_trans: {
      auto code = hilbert_encode(apply_trans(c), bits);
      code.kind = kind;
      return code;
    }
  }
  throw ContractViolation("bad curve kind");
}

inline Cell decode(const CurveCode& code) {
  switch (code.kind) {
    case CurveKind::z: return morton_decode(code);
    case CurveKind::z_trans: return apply_trans(morton_decode(code));
    case CurveKind::hilbert: return hilbert_decode(code);
    case CurveKind::hilbert_trans: return apply_trans(hilbert_decode(code));
  }
  throw ContractViolation("bad curve kind");
}

/// Stable order of points by curve code; equal codes keep input order.
inline std::vector<std::size_t> serialize_order(std::span<const std::array<double, 3>> coords,
                                                const GridSpec& grid, CurveKind kind) {
  grid.validate();
  std::vector<std::uint64_t> codes(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i)
    codes[i] = encode(quantize(coords[i], grid), grid.bits_per_axis, kind).code;
  std::vector<std::size_t> order(coords.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return codes[a] < codes[b]; });
  return order;
}

inline std::vector<std::size_t> serialize_order(const geom::LidarPointCloud& cloud, const GridSpec& grid,
                                                CurveKind kind) {
  const auto coords = cloud.coords();
  return serialize_order(std::span<const std::array<double, 3>>(coords), grid, kind);
}

/// Consecutive chunks of `order`; the last chunk may be short.
inline std::vector<std::vector<std::size_t>> partition_groups(std::span<const std::size_t> order,
                                                              std::size_t group_size) {
  require(group_size >= 1, "group_size must be >= 1");
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t begin = 0; begin < order.size(); begin += group_size) {
    const std::size_t end = std::min(order.size(), begin + group_size);
    groups.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                        order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return groups;
}

/// Mean |code(a) - code(b)| over every pair of face-adjacent cells of the full grid.
inline double mean_adjacent_code_gap(CurveKind kind, int bits) {
  require(bits >= 1 && bits <= 7, "mean_adjacent_code_gap enumerates the grid; keep bits <= 7");
  const std::uint32_t n = std::uint32_t{1} << bits;
  double total = 0;
  std::uint64_t pairs = 0;
  for (std::uint32_t x = 0; x < n; ++x)
    for (std::uint32_t y = 0; y < n; ++y)
      for (std::uint32_t z = 0; z < n; ++z) {
        const Cell c{x, y, z};
        const auto here = encode(c, bits, kind).code;
        for (int a = 0; a < 3; ++a) {
          if (c[a] + 1 >= n) continue;
          Cell nb = c;
          ++nb[a];
          const auto there = encode(nb, bits, kind).code;
          total += static_cast<double>(here > there ? here - there : there - here);
          ++pairs;
        }
      }
  return total / static_cast<double>(pairs);
}

}  // namespace vfs3d::curves
