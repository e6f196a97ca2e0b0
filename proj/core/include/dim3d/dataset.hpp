#pragma once

#include <string>
#include <vector>

#include "dim3d/rng.hpp"
#include "dim3d/voxel.hpp"

namespace dim3d {

// Synthetic stand-in dataset: parametric surfaces sampled uniformly by area,
// optionally jittered. Classes: sphere, box, torus, cylinder.
struct DatasetSpec {
  std::vector<std::string> classes{"sphere"};
  int clouds_per_class = 8;
  int points_per_cloud = 128;  // N >= 8
  double jitter = 0.0;         // Gaussian sigma per coordinate
  uint64_t seed = 0;

  void validate() const;
};

const std::vector<std::string>& known_shape_classes();

// One surface sample of `n` points for a named class. Sphere points sit at
// radius 1; box faces are area-weighted; torus sampling is
// rejection-corrected; cylinder includes both caps.
Tensor sample_shape_surface(const std::string& cls, int n, Rng& rng);

// In-memory dataset: clouds_per_class clouds per listed class, class_id =
// index into spec.classes. Each cloud draws from its own named stream, so
// the data is independent of generation order.
std::vector<PointCloud> make_dataset(const DatasetSpec& spec);

// Writes one PCB1 file per cloud plus manifest.csv ("path,class_id" rows)
// into out_dir. Deterministic bytes for a fixed spec.
void gen_data(const DatasetSpec& spec, const std::string& out_dir);

// Reads a manifest-described dataset back (paths relative to dir).
std::vector<PointCloud> load_dataset(const std::string& dir);

}  // namespace dim3d
