#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "vfs3d/core/binary_io.hpp"
#include "vfs3d/nn/layers.hpp"

namespace vfs3d::nn {

// Layout: "VFS3CKPT" | u32 version | u64 step | u32 count |
//   count x (u32 name_len | name | u8 group | u32 rank | rank x u64 dim) |
//   count x payload (f64 little-endian, row-major)
inline constexpr char kCheckpointMagic[8] = {'V', 'F', 'S', '3', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  ParamGroup group = ParamGroup::main;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::uint64_t step = 0;
  std::vector<CheckpointEntry> entries;
};

inline void write_checkpoint(const std::filesystem::path& path, std::span<const Parameter> params, std::uint64_t step) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  io::write_le<std::uint32_t>(os, kCheckpointVersion);
  io::write_le<std::uint64_t>(os, step);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    io::write_bytes(os, p.name);
    io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(p.group));
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.var.rank()));
    for (auto d : p.var.shape()) io::write_le<std::uint64_t>(os, d);
  }
  for (const auto& p : params)
    for (real v : p.var.value()) io::write_le<double>(os, static_cast<double>(v));
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  if (io::read_bytes(is, 8) != std::string(kCheckpointMagic, 8)) throw IoError("not a checkpoint: " + path.string());
  if (io::read_le<std::uint32_t>(is) != kCheckpointVersion) throw IoError("unsupported checkpoint version");
  Checkpoint ck;
  ck.step = io::read_le<std::uint64_t>(is);
  const auto count = io::read_le<std::uint32_t>(is);
  ck.entries.resize(count);
  for (auto& e : ck.entries) {
    e.name = io::read_bytes(is, io::read_le<std::uint32_t>(is));
    const auto g = io::read_le<std::uint8_t>(is);
    if (g > 1) throw IoError("bad parameter group tag in checkpoint");
    e.group = static_cast<ParamGroup>(g);
    e.shape.resize(io::read_le<std::uint32_t>(is));
    for (auto& d : e.shape) d = io::read_le<std::uint64_t>(is);
  }
  for (auto& e : ck.entries) {
    e.values.resize(numel(e.shape));
    for (auto& v : e.values) v = io::read_le<double>(is);
  }
  return ck;
}

/// Copies checkpoint values into matching parameters of `store`. Every entry
/// must name an existing parameter of the same shape.
inline std::uint64_t load_checkpoint(const std::filesystem::path& path, ParamStore& store) {
  const Checkpoint ck = read_checkpoint(path);
  for (const auto& e : ck.entries) {
    const Parameter* p = store.find(e.name);
    if (!p) throw IoError("checkpoint parameter '" + e.name + "' not present in model");
    if (p->var.shape() != e.shape)
      throw IoError("checkpoint parameter '" + e.name + "' has shape " + shape_str(e.shape) + ", model expects " +
                    shape_str(p->var.shape()));
    Var v = p->var;
    auto dst = v.mutable_value();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<real>(e.values[i]);
  }
  return ck.step;
}

}  // namespace vfs3d::nn
