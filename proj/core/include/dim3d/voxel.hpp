#pragma once

#include <array>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "dim3d/tensor.hpp"

namespace dim3d {

struct PointCloud {
  Tensor points;  // [N,3]
  std::optional<int> class_id;

  int64_t size() const { return points.defined() ? points.dim(0) : 0; }
};

struct VoxelGrid {
  Tensor values;  // [V,V,V,C], axes (x,y,z,channel)
  int resolution = 0;
  int channels = 0;
};

// Patch tokens plus the conditioning tokens prepended in front of them.
struct TokenSequence {
  Tensor tokens;       // [L,D]
  Tensor cond_tokens;  // [K,D], may be undefined before conditioning
};

struct NormalizationStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  double scale = 1.0;
};

// Margin keeping normalized coordinates strictly inside (-1,1).
inline constexpr double kNormalizationMargin = 0.95;

// Subtracts the global per-axis mean and divides by the single global scale
// max_p ||p - mean||_inf, times the margin. Throws on an empty or fully
// degenerate dataset (all points identical).
std::pair<std::vector<PointCloud>, NormalizationStats> normalize_dataset(
    const std::vector<PointCloud>& clouds);

Tensor normalize_points(const Tensor& points, const NormalizationStats& s);
Tensor denormalize_points(const Tensor& points, const NormalizationStats& s);

// Trilinear scatter of each point's own coordinates (C=3 features) into its
// 8 surrounding cells; per-cell features are weight-normalized. Accumulation
// happens in a canonical per-cell order, so the result is bit-exact under
// input permutation.
VoxelGrid voxelize(const PointCloud& cloud, int resolution);

// Trilinear gather of grid values at the query coordinates ([-1,1] space).
// Differentiable with respect to the grid values.
Tensor devoxelize(const VoxelGrid& grid, const Tensor& at);

// Flattening order of patchify: patches ordered x-fastest (then y, then z),
// voxels inside a patch x-fastest as well, channels innermost. The returned
// map sends flattened token elements to flat grid offsets.
std::shared_ptr<const std::vector<int64_t>> patch_flatten_index(int V, int P,
                                                                int C);

// Partition into (V/P)^3 cubes, flatten, project by W_embed [P^3*C, D] and
// add positional embeddings pos [L,D]. Throws when P does not divide V.
TokenSequence patchify(const VoxelGrid& grid, int P, const Tensor& W_embed,
                       const Tensor& pos);

// Exact inverse of the partition/flatten step of patchify (no projection).
VoxelGrid depatchify(const Tensor& tokens, int P, int V, int C);

}  // namespace dim3d
