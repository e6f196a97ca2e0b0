#include "dim3d/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "dim3d/io.hpp"

namespace dim3d {

namespace {

constexpr double kSphereRadius = 1.0;
constexpr double kBoxHalf[3] = {1.0, 0.75, 0.5};
constexpr double kTorusMajor = 0.7;
constexpr double kTorusMinor = 0.3;
constexpr double kCylRadius = 0.5;
constexpr double kCylHalfHeight = 0.7;

void sample_sphere(double* p, Rng& rng) {
  // Area-uniform: z uniform in [-1,1], azimuth uniform.
  const double z = rng.uniform(-1.0, 1.0);
  const double theta = rng.uniform(0.0, 2.0 * M_PI);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  p[0] = kSphereRadius * r * std::cos(theta);
  p[1] = kSphereRadius * r * std::sin(theta);
  p[2] = kSphereRadius * z;
}

void sample_box(double* p, Rng& rng) {
  // Pick a face pair proportional to its area, then a sign.
  const double ax = kBoxHalf[1] * kBoxHalf[2];
  const double ay = kBoxHalf[0] * kBoxHalf[2];
  const double az = kBoxHalf[0] * kBoxHalf[1];
  const double u = rng.uniform() * (ax + ay + az);
  int axis = u < ax ? 0 : (u < ax + ay ? 1 : 2);
  const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  for (int a = 0; a < 3; ++a)
    p[a] = rng.uniform(-kBoxHalf[a], kBoxHalf[a]);
  p[axis] = sign * kBoxHalf[axis];
}

void sample_torus(double* p, Rng& rng) {
  // Rejection on the tube angle corrects for the varying circumference.
  double v;
  for (;;) {
    v = rng.uniform(0.0, 2.0 * M_PI);
    const double accept =
        (kTorusMajor + kTorusMinor * std::cos(v)) / (kTorusMajor + kTorusMinor);
    if (rng.uniform() < accept) break;
  }
  const double u = rng.uniform(0.0, 2.0 * M_PI);
  const double ring = kTorusMajor + kTorusMinor * std::cos(v);
  p[0] = ring * std::cos(u);
  p[1] = ring * std::sin(u);
  p[2] = kTorusMinor * std::sin(v);
}

void sample_cylinder(double* p, Rng& rng) {
  const double side = 2.0 * M_PI * kCylRadius * 2.0 * kCylHalfHeight;
  const double cap = M_PI * kCylRadius * kCylRadius;
  const double u = rng.uniform() * (side + 2.0 * cap);
  if (u < side) {
    const double theta = rng.uniform(0.0, 2.0 * M_PI);
    p[0] = kCylRadius * std::cos(theta);
    p[1] = kCylRadius * std::sin(theta);
    p[2] = rng.uniform(-kCylHalfHeight, kCylHalfHeight);
  } else {
    // Uniform over a disc via sqrt radius.
    const double r = kCylRadius * std::sqrt(rng.uniform());
    const double theta = rng.uniform(0.0, 2.0 * M_PI);
    p[0] = r * std::cos(theta);
    p[1] = r * std::sin(theta);
    p[2] = u < side + cap ? kCylHalfHeight : -kCylHalfHeight;
  }
}

using SampleFn = void (*)(double*, Rng&);

SampleFn shape_fn(const std::string& cls) {
  if (cls == "sphere") return sample_sphere;
  if (cls == "box") return sample_box;
  if (cls == "torus") return sample_torus;
  if (cls == "cylinder") return sample_cylinder;
  std::string names;
  for (const auto& n : known_shape_classes())
    names += (names.empty() ? "" : ", ") + n;
  throw std::invalid_argument("unknown shape class '" + cls +
                              "' (valid: " + names + ")");
}

}  // namespace

const std::vector<std::string>& known_shape_classes() {
  static const std::vector<std::string> names{"sphere", "box", "torus",
                                              "cylinder"};
  return names;
}

void DatasetSpec::validate() const {
  if (classes.empty()) throw std::invalid_argument("dataset needs classes");
  if (classes.size() > 55)
    throw std::invalid_argument("at most 55 classes supported");
  if (points_per_cloud < 8)
    throw std::invalid_argument("points_per_cloud must be >= 8");
  if (clouds_per_class < 1)
    throw std::invalid_argument("clouds_per_class must be >= 1");
  if (jitter < 0.0) throw std::invalid_argument("jitter must be >= 0");
  for (const auto& c : classes) shape_fn(c);
}

Tensor sample_shape_surface(const std::string& cls, int n, Rng& rng) {
  SampleFn fn = shape_fn(cls);
  std::vector<double> pts(static_cast<size_t>(n) * 3);
  for (int i = 0; i < n; ++i) fn(pts.data() + i * 3, rng);
  return Tensor::from({n, 3}, std::move(pts));
}

std::vector<PointCloud> make_dataset(const DatasetSpec& spec) {
  spec.validate();
  RngPool pool(spec.seed);
  std::vector<PointCloud> clouds;
  clouds.reserve(spec.classes.size() * spec.clouds_per_class);
  for (size_t ci = 0; ci < spec.classes.size(); ++ci) {
    for (int i = 0; i < spec.clouds_per_class; ++i) {
      Rng& rng =
          pool.stream("data." + spec.classes[ci] + "." + std::to_string(i));
      Tensor pts = sample_shape_surface(spec.classes[ci],
                                        spec.points_per_cloud, rng);
      if (spec.jitter > 0.0) {
        auto raw = pts.raw();
        for (double& v : raw) v += spec.jitter * rng.gaussian();
      }
      clouds.push_back({std::move(pts), static_cast<int>(ci)});
    }
  }
  return clouds;
}

void gen_data(const DatasetSpec& spec, const std::string& out_dir) {
  std::vector<PointCloud> clouds = make_dataset(spec);
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ofstream manifest(fs::path(out_dir) / "manifest.csv",
                         std::ios::binary);
  if (!manifest)
    throw io::IoError(io::IoError::Code::Io,
                      "cannot write manifest in " + out_dir);
  manifest << "path,class_id\n";
  size_t cloud_idx = 0;
  for (size_t ci = 0; ci < spec.classes.size(); ++ci) {
    for (int i = 0; i < spec.clouds_per_class; ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "%s_%03d.pcb",
                    spec.classes[ci].c_str(), i);
      io::write_point_cloud((fs::path(out_dir) / name).string(),
                            clouds[cloud_idx++]);
      manifest << name << ',' << ci << '\n';
    }
  }
}

std::vector<PointCloud> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream manifest(fs::path(dir) / "manifest.csv");
  if (!manifest)
    throw io::IoError(io::IoError::Code::Io,
                      "missing manifest.csv in " + dir);
  std::vector<PointCloud> clouds;
  std::string line;
  bool header = true;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    const size_t comma = line.rfind(',');
    if (comma == std::string::npos)
      throw io::IoError(io::IoError::Code::BadValue,
                        "malformed manifest line: " + line);
    PointCloud c =
        io::read_point_cloud((fs::path(dir) / line.substr(0, comma)).string());
    c.class_id = std::stoi(line.substr(comma + 1));
    clouds.push_back(std::move(c));
  }
  if (clouds.empty())
    throw io::IoError(io::IoError::Code::BadValue,
                      "manifest lists no clouds: " + dir);
  return clouds;
}

}  // namespace dim3d
