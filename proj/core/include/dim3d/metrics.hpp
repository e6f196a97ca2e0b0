#pragma once

#include <string>
#include <vector>

#include "dim3d/voxel.hpp"

namespace dim3d {

// Which point-set distance drives a set-level metric.
enum class PairDistance { CD, EMD };

// Squared-distance Chamfer: mean nearest-neighbour squared distance in both
// directions, summed. Throws on empty input.
double chamfer(const PointCloud& a, const PointCloud& b);

// Exact Earth Mover's Distance between equal-size clouds: minimum mean
// Euclidean (non-squared) matching cost over bijections, solved exactly.
double emd(const PointCloud& a, const PointCloud& b);

// Exact minimum-cost assignment on an n x n cost matrix (row-major),
// O(n^3) shortest augmenting paths. Returns the total cost; row_to_col,
// when given, receives the matching.
double hungarian(const std::vector<double>& cost, int n,
                 std::vector<int>* row_to_col = nullptr);

// Leave-one-out two-sample classification accuracy (percent) over the union
// of both sets; ties broken by lowest index. 50% means indistinguishable.
double one_nna(const std::vector<PointCloud>& gen,
               const std::vector<PointCloud>& ref, PairDistance dist);

// Percent of reference clouds that are the nearest reference of at least
// one generated cloud.
double coverage(const std::vector<PointCloud>& gen,
                const std::vector<PointCloud>& ref, PairDistance dist);

struct MetricsReport {
  double one_nna_cd = 0.0, one_nna_emd = 0.0;
  double cov_cd = 0.0, cov_emd = 0.0;
  // Mean over generated clouds of the distance to the nearest reference.
  double mean_cd = 0.0, mean_emd = 0.0;
  int64_t n_gen = 0, n_ref = 0;
  bool has_cd = false, has_emd = false;

  // Deterministic key-sorted "key = value" block.
  std::string text() const;
  static std::string csv_header();
  std::string csv_row() const;  // uncomputed fields render as "nan"
};

MetricsReport evaluate_sets(const std::vector<PointCloud>& gen,
                            const std::vector<PointCloud>& ref, bool with_cd,
                            bool with_emd);

}  // namespace dim3d
