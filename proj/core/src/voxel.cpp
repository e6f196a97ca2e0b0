#include "dim3d/voxel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <tuple>

namespace dim3d {

namespace {

void check_points(const Tensor& points, const char* who) {
  if (points.rank() != 2 || points.dim(1) != 3)
    throw std::invalid_argument(std::string(who) + " expects [N,3] points, got " +
                                shape_str(points.shape()));
}

struct CellWeight {
  int64_t cell;
  double weight;
};

// 8-neighbour trilinear footprint of one point in [-1,1]^3.
void trilinear_footprint(const double* p, int V, CellWeight out[8]) {
  double g[3];
  int64_t i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    g[a] = (p[a] + 1.0) * 0.5 * (V - 1);
    g[a] = std::clamp(g[a], 0.0, static_cast<double>(V - 1));
    i0[a] = V >= 2 ? std::min(static_cast<int64_t>(g[a]),
                              static_cast<int64_t>(V - 2))
                   : 0;
    f[a] = V >= 2 ? g[a] - static_cast<double>(i0[a]) : 0.0;
  }
  int idx = 0;
  for (int dx = 0; dx < 2; ++dx)
    for (int dy = 0; dy < 2; ++dy)
      for (int dz = 0; dz < 2; ++dz) {
        const int64_t x = std::min<int64_t>(i0[0] + dx, V - 1);
        const int64_t y = std::min<int64_t>(i0[1] + dy, V - 1);
        const int64_t z = std::min<int64_t>(i0[2] + dz, V - 1);
        const double w = (dx ? f[0] : 1.0 - f[0]) * (dy ? f[1] : 1.0 - f[1]) *
                         (dz ? f[2] : 1.0 - f[2]);
        out[idx++] = {(x * V + y) * V + z, w};
      }
}

}  // namespace

std::pair<std::vector<PointCloud>, NormalizationStats> normalize_dataset(
    const std::vector<PointCloud>& clouds) {
  if (clouds.empty())
    throw std::invalid_argument("normalize_dataset: empty dataset");
  double mean[3] = {0.0, 0.0, 0.0};
  int64_t total = 0;
  for (const auto& c : clouds) {
    check_points(c.points, "normalize_dataset");
    const auto d = c.points.data();
    for (int64_t i = 0; i < c.size(); ++i)
      for (int a = 0; a < 3; ++a) mean[a] += d[i * 3 + a];
    total += c.size();
  }
  for (double& m : mean) m /= static_cast<double>(total);

  double scale = 0.0;
  for (const auto& c : clouds) {
    const auto d = c.points.data();
    for (int64_t i = 0; i < c.size(); ++i)
      for (int a = 0; a < 3; ++a)
        scale = std::max(scale, std::abs(d[i * 3 + a] - mean[a]));
  }
  if (scale == 0.0)
    throw std::invalid_argument(
        "normalize_dataset: degenerate dataset (all points identical)");

  NormalizationStats stats;
  stats.mean = {mean[0], mean[1], mean[2]};
  stats.scale = scale;

  std::vector<PointCloud> out;
  out.reserve(clouds.size());
  for (const auto& c : clouds)
    out.push_back({normalize_points(c.points, stats), c.class_id});
  return {std::move(out), stats};
}

Tensor normalize_points(const Tensor& points, const NormalizationStats& s) {
  check_points(points, "normalize_points");
  std::vector<double> out(points.numel());
  const auto d = points.data();
  for (int64_t i = 0; i < points.dim(0); ++i)
    for (int a = 0; a < 3; ++a)
      out[i * 3 + a] =
          (d[i * 3 + a] - s.mean[a]) / s.scale * kNormalizationMargin;
  return Tensor::from(points.shape(), std::move(out));
}

Tensor denormalize_points(const Tensor& points, const NormalizationStats& s) {
  check_points(points, "denormalize_points");
  std::vector<double> out(points.numel());
  const auto d = points.data();
  for (int64_t i = 0; i < points.dim(0); ++i)
    for (int a = 0; a < 3; ++a)
      out[i * 3 + a] =
          d[i * 3 + a] * s.scale / kNormalizationMargin + s.mean[a];
  return Tensor::from(points.shape(), std::move(out));
}

VoxelGrid voxelize(const PointCloud& cloud, int resolution) {
  check_points(cloud.points, "voxelize");
  if (resolution < 1)
    throw std::invalid_argument("voxelize: resolution must be >= 1");
  const int V = resolution;
  const int64_t N = cloud.size();
  const int C = 3;

  // One record per (cell, contribution). Sorting lexicographically fixes the
  // per-cell accumulation order, making the sum independent of point order.
  struct Contrib {
    int64_t cell;
    double w, fx, fy, fz;
    bool operator<(const Contrib& o) const {
      return std::tie(cell, w, fx, fy, fz) <
             std::tie(o.cell, o.w, o.fx, o.fy, o.fz);
    }
  };
  std::vector<Contrib> contribs;
  contribs.reserve(N * 8);
  const auto pts = cloud.points.data();
  CellWeight fp[8];
  for (int64_t i = 0; i < N; ++i) {
    const double* p = pts.data() + i * 3;
    trilinear_footprint(p, V, fp);
    for (int j = 0; j < 8; ++j)
      contribs.push_back({fp[j].cell, fp[j].weight, fp[j].weight * p[0],
                          fp[j].weight * p[1], fp[j].weight * p[2]});
  }
  std::sort(contribs.begin(), contribs.end());

  std::vector<double> values(static_cast<int64_t>(V) * V * V * C, 0.0);
  std::vector<double> wsum(static_cast<int64_t>(V) * V * V, 0.0);
  for (const auto& c : contribs) {
    wsum[c.cell] += c.w;
    values[c.cell * C + 0] += c.fx;
    values[c.cell * C + 1] += c.fy;
    values[c.cell * C + 2] += c.fz;
  }
  for (int64_t cell = 0; cell < static_cast<int64_t>(V) * V * V; ++cell) {
    if (wsum[cell] > 0.0) {
      for (int a = 0; a < C; ++a) values[cell * C + a] /= wsum[cell];
    }
  }

  VoxelGrid grid;
  grid.values = Tensor::from({V, V, V, C}, std::move(values));
  grid.resolution = V;
  grid.channels = C;
  return grid;
}

Tensor devoxelize(const VoxelGrid& grid, const Tensor& at) {
  check_points(at, "devoxelize");
  const int V = grid.resolution;
  const int C = grid.channels;
  const int64_t N = at.dim(0);

  auto footprint = std::make_shared<std::vector<CellWeight>>(N * 8);
  const auto pts = at.data();
  for (int64_t i = 0; i < N; ++i)
    trilinear_footprint(pts.data() + i * 3, V, footprint->data() + i * 8);

  std::vector<double> out(N * C, 0.0);
  const auto gv = grid.values.data();
  for (int64_t i = 0; i < N; ++i)
    for (int j = 0; j < 8; ++j) {
      const auto& cw = (*footprint)[i * 8 + j];
      for (int c = 0; c < C; ++c)
        out[i * C + c] += cw.weight * gv[cw.cell * C + c];
    }

  const bool rg = grad_enabled() && grid.values.requires_grad();
  Tensor y = Tensor::from({N, C}, std::move(out));
  y.set_requires_grad(rg);
  if (rg) {
    auto gs = grid.values.state();
    auto ys = y.state();
    Tape::active().record([gs, ys, footprint, N, C]() {
      if (ys->grad.empty()) return;
      gs->ensure_grad();
      for (int64_t i = 0; i < N; ++i)
        for (int j = 0; j < 8; ++j) {
          const auto& cw = (*footprint)[i * 8 + j];
          for (int c = 0; c < C; ++c)
            gs->grad[cw.cell * C + c] += cw.weight * ys->grad[i * C + c];
        }
    });
  }
  return y;
}

std::shared_ptr<const std::vector<int64_t>> patch_flatten_index(int V, int P,
                                                                int C) {
  if (P < 1 || V < 1 || V % P != 0)
    throw std::invalid_argument("patch size " + std::to_string(P) +
                                " does not divide voxel resolution " +
                                std::to_string(V));
  const int G = V / P;  // patches per axis
  const int64_t L = static_cast<int64_t>(G) * G * G;
  const int64_t patch_len = static_cast<int64_t>(P) * P * P * C;
  auto idx = std::make_shared<std::vector<int64_t>>(L * patch_len);
  int64_t o = 0;
  for (int cz = 0; cz < G; ++cz)
    for (int cy = 0; cy < G; ++cy)
      for (int cx = 0; cx < G; ++cx) {
        // Patch (cx,cy,cz) has rank cx + G*cy + G^2*cz (x fastest); the
        // loop nest above emits exactly that order.
        for (int pz = 0; pz < P; ++pz)
          for (int py = 0; py < P; ++py)
            for (int px = 0; px < P; ++px) {
              const int64_t x = cx * P + px;
              const int64_t y = cy * P + py;
              const int64_t z = cz * P + pz;
              const int64_t cellflat = ((x * V + y) * V + z) * C;
              for (int c = 0; c < C; ++c) (*idx)[o++] = cellflat + c;
            }
      }
  return idx;
}

TokenSequence patchify(const VoxelGrid& grid, int P, const Tensor& W_embed,
                       const Tensor& pos) {
  const int V = grid.resolution;
  const int C = grid.channels;
  auto idx = patch_flatten_index(V, P, C);
  const int G = V / P;
  const int64_t L = static_cast<int64_t>(G) * G * G;
  const int64_t patch_len = static_cast<int64_t>(P) * P * P * C;
  if (W_embed.rank() != 2 || W_embed.dim(0) != patch_len)
    throw std::invalid_argument("patch embedding expects [" +
                                std::to_string(patch_len) + ",D], got " +
                                shape_str(W_embed.shape()));
  const int64_t D = W_embed.dim(1);
  if (pos.shape() != Shape{L, D})
    throw std::invalid_argument("positional embedding must be [" +
                                std::to_string(L) + "," + std::to_string(D) +
                                "], got " + shape_str(pos.shape()));
  Tensor flat = gather_flat(grid.values, idx, {L, patch_len});
  TokenSequence seq;
  seq.tokens = add(matmul(flat, W_embed), pos);
  return seq;
}

VoxelGrid depatchify(const Tensor& tokens, int P, int V, int C) {
  const int G = P >= 1 ? V / P : 0;
  if (P < 1 || V < 1 || V % P != 0)
    throw std::invalid_argument("patch size " + std::to_string(P) +
                                " does not divide voxel resolution " +
                                std::to_string(V));
  const int64_t L = static_cast<int64_t>(G) * G * G;
  const int64_t patch_len = static_cast<int64_t>(P) * P * P * C;
  if (tokens.rank() != 2 || tokens.dim(0) != L || tokens.dim(1) != patch_len)
    throw std::invalid_argument(
        "depatchify expects [" + std::to_string(L) + "," +
        std::to_string(patch_len) + "] tokens, got " +
        shape_str(tokens.shape()));

  auto fwd = patch_flatten_index(V, P, C);
  auto inv = std::make_shared<std::vector<int64_t>>(fwd->size());
  for (size_t i = 0; i < fwd->size(); ++i) (*inv)[(*fwd)[i]] = i;

  VoxelGrid grid;
  grid.values = gather_flat(tokens, inv, {V, V, V, C});
  grid.resolution = V;
  grid.channels = C;
  return grid;
}

}  // namespace dim3d
