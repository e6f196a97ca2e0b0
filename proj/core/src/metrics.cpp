#include "dim3d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace dim3d {

namespace {

void check_nonempty(const PointCloud& c, const char* who) {
  if (c.size() < 1)
    throw std::invalid_argument(std::string(who) + ": empty point cloud");
}

double sq_dist(const double* a, const double* b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

double directed_chamfer(const PointCloud& a, const PointCloud& b) {
  const auto pa = a.points.data();
  const auto pb = b.points.data();
  double total = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < b.size(); ++j)
      best = std::min(best, sq_dist(pa.data() + i * 3, pb.data() + j * 3));
    total += best;
  }
  return total / static_cast<double>(a.size());
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double chamfer(const PointCloud& a, const PointCloud& b) {
  check_nonempty(a, "chamfer");
  check_nonempty(b, "chamfer");
  return directed_chamfer(a, b) + directed_chamfer(b, a);
}

double hungarian(const std::vector<double>& cost, int n,
                 std::vector<int>* row_to_col) {
  if (n < 1) throw std::invalid_argument("hungarian: n must be >= 1");
  if (static_cast<int64_t>(cost.size()) != static_cast<int64_t>(n) * n)
    throw std::invalid_argument("hungarian: cost matrix size mismatch");
  constexpr double kInf = std::numeric_limits<double>::infinity();

  // Successive shortest augmenting paths with dual potentials (1-indexed
  // internals; column 0 is the virtual root).
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0);  // match[col] = row occupying col
  std::vector<int> way(n + 1, 0);

  for (int row = 1; row <= n; ++row) {
    match[0] = row;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      int j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  if (row_to_col) {
    row_to_col->assign(n, -1);
    for (int j = 1; j <= n; ++j)
      if (match[j] != 0) (*row_to_col)[match[j] - 1] = j - 1;
  }
  double total = 0.0;
  for (int j = 1; j <= n; ++j)
    if (match[j] != 0) total += cost[(match[j] - 1) * n + (j - 1)];
  return total;
}

double emd(const PointCloud& a, const PointCloud& b) {
  check_nonempty(a, "emd");
  check_nonempty(b, "emd");
  if (a.size() != b.size())
    throw std::invalid_argument("emd: clouds must have equal cardinality (" +
                                std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  const int n = static_cast<int>(a.size());
  std::vector<double> cost(static_cast<int64_t>(n) * n);
  const auto pa = a.points.data();
  const auto pb = b.points.data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      cost[static_cast<int64_t>(i) * n + j] =
          std::sqrt(sq_dist(pa.data() + i * 3, pb.data() + j * 3));
  return hungarian(cost, n) / static_cast<double>(n);
}

namespace {

using DistFn = double (*)(const PointCloud&, const PointCloud&);

DistFn dist_fn(PairDistance d) { return d == PairDistance::CD ? chamfer : emd; }

// Pairwise distances over the union gen + ref (symmetric, zero diagonal).
std::vector<double> union_distances(const std::vector<PointCloud>& gen,
                                    const std::vector<PointCloud>& ref,
                                    PairDistance dist) {
  const int64_t n = static_cast<int64_t>(gen.size() + ref.size());
  auto cloud = [&](int64_t i) -> const PointCloud& {
    return i < static_cast<int64_t>(gen.size())
               ? gen[i]
               : ref[i - static_cast<int64_t>(gen.size())];
  };
  DistFn fn = dist_fn(dist);
  std::vector<double> d(n * n, 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) {
      const double v = fn(cloud(i), cloud(j));
      d[i * n + j] = v;
      d[j * n + i] = v;
    }
  return d;
}

}  // namespace

double one_nna(const std::vector<PointCloud>& gen,
               const std::vector<PointCloud>& ref, PairDistance dist) {
  if (gen.empty() || ref.empty())
    throw std::invalid_argument("one_nna: both sets must be nonempty");
  const int64_t ng = static_cast<int64_t>(gen.size());
  const int64_t n = ng + static_cast<int64_t>(ref.size());
  const std::vector<double> d = union_distances(gen, ref, dist);

  int64_t correct = 0;
  for (int64_t i = 0; i < n; ++i) {
    int64_t best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (d[i * n + j] < best_d) {  // ties keep the lowest index
        best_d = d[i * n + j];
        best = j;
      }
    }
    const bool i_gen = i < ng, nn_gen = best < ng;
    if (i_gen == nn_gen) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

double coverage(const std::vector<PointCloud>& gen,
                const std::vector<PointCloud>& ref, PairDistance dist) {
  if (gen.empty() || ref.empty())
    throw std::invalid_argument("coverage: both sets must be nonempty");
  DistFn fn = dist_fn(dist);
  std::vector<char> covered(ref.size(), 0);
  for (const PointCloud& g : gen) {
    int64_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < ref.size(); ++j) {
      const double v = fn(g, ref[j]);
      if (v < best_d) {
        best_d = v;
        best = static_cast<int64_t>(j);
      }
    }
    covered[best] = 1;
  }
  int64_t count = 0;
  for (char c : covered) count += c;
  return 100.0 * static_cast<double>(count) / static_cast<double>(ref.size());
}

MetricsReport evaluate_sets(const std::vector<PointCloud>& gen,
                            const std::vector<PointCloud>& ref, bool with_cd,
                            bool with_emd) {
  MetricsReport r;
  r.n_gen = static_cast<int64_t>(gen.size());
  r.n_ref = static_cast<int64_t>(ref.size());
  auto mean_nearest = [&](PairDistance dist) {
    DistFn fn = dist_fn(dist);
    double total = 0.0;
    for (const PointCloud& g : gen) {
      double best = std::numeric_limits<double>::infinity();
      for (const PointCloud& c : ref) best = std::min(best, fn(g, c));
      total += best;
    }
    return total / static_cast<double>(gen.size());
  };
  if (with_cd) {
    r.has_cd = true;
    r.one_nna_cd = one_nna(gen, ref, PairDistance::CD);
    r.cov_cd = coverage(gen, ref, PairDistance::CD);
    r.mean_cd = mean_nearest(PairDistance::CD);
  }
  if (with_emd) {
    r.has_emd = true;
    r.one_nna_emd = one_nna(gen, ref, PairDistance::EMD);
    r.cov_emd = coverage(gen, ref, PairDistance::EMD);
    r.mean_emd = mean_nearest(PairDistance::EMD);
  }
  return r;
}

std::string MetricsReport::text() const {
  // Keys emitted in sorted order.
  std::ostringstream os;
  if (has_cd) os << "cov_cd = " << fmt(cov_cd) << "\n";
  if (has_emd) os << "cov_emd = " << fmt(cov_emd) << "\n";
  if (has_cd) os << "mean_cd = " << fmt(mean_cd) << "\n";
  if (has_emd) os << "mean_emd = " << fmt(mean_emd) << "\n";
  os << "n_gen = " << n_gen << "\n";
  os << "n_ref = " << n_ref << "\n";
  if (has_cd) os << "one_nna_cd = " << fmt(one_nna_cd) << "\n";
  if (has_emd) os << "one_nna_emd = " << fmt(one_nna_emd) << "\n";
  return os.str();
}

std::string MetricsReport::csv_header() {
  return "cov_cd,cov_emd,mean_cd,mean_emd,n_gen,n_ref,one_nna_cd,one_nna_emd";
}

std::string MetricsReport::csv_row() const {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::ostringstream os;
  os << fmt(has_cd ? cov_cd : nan) << ',' << fmt(has_emd ? cov_emd : nan)
     << ',' << fmt(has_cd ? mean_cd : nan) << ','
     << fmt(has_emd ? mean_emd : nan) << ',' << n_gen << ',' << n_ref << ','
     << fmt(has_cd ? one_nna_cd : nan) << ','
     << fmt(has_emd ? one_nna_emd : nan);
  return os.str();
}

}  // namespace dim3d
