#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dim3d/tensor.hpp"
#include "dim3d/voxel.hpp"

namespace dim3d::io {

struct IoError : std::runtime_error {
  enum class Code { BadMagic, Truncated, BadDim, BadCrc, BadValue, Io };
  Code code;
  IoError(Code c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

// Point-cloud container format "PCB1":
//   magic 'PCB1' | u32 count | u32 dim (= 3) | count*dim float32, all
//   little-endian. A text fallback of one "x y z" line per point is
//   accepted by the reader; values in both formats carry float32 precision.
void write_point_cloud(const std::string& path, const PointCloud& cloud);
void write_point_cloud_text(const std::string& path, const PointCloud& cloud);
PointCloud read_point_cloud(const std::string& path);  // detects the format

// Key=value configuration files: one pair per line, '#' starts a comment,
// blank lines ignored, later keys override earlier ones.
std::map<std::string, std::string> read_config_file(const std::string& path);
std::map<std::string, std::string> parse_config(const std::string& text);

// Checkpoint container "DIM3CKPT":
//   magic 'DIM3CKPT' | u32 version (=1) | u32 config bytes | config text
//   (key=value lines) | u32 tensor count | entries | u32 CRC32 of all
//   preceding bytes (zlib polynomial). Each entry: u32 name length | name |
//   u32 rank | u32 dims[rank] | float64 payload, little-endian throughout.
struct CheckpointData {
  std::map<std::string, std::string> config;
  std::vector<std::pair<std::string, Tensor>> tensors;  // serialized in order

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

}  // namespace dim3d::io
