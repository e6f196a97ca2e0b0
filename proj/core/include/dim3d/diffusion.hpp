#pragma once

#include <optional>
#include <vector>

#include "dim3d/model.hpp"
#include "dim3d/rng.hpp"
#include "dim3d/tensor.hpp"
#include "dim3d/voxel.hpp"

namespace dim3d {

// Forward-process schedule: linear beta from 1e-4 to 2e-2 (the standard
// DDPM range), alpha_bar cumulative products and the q-posterior standard
// deviations (sigma[0] = 0).
struct NoiseSchedule {
  int steps = 0;  // T
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> sigma;
};

NoiseSchedule make_schedule(int steps);

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps,
                const NoiseSchedule& sched);

struct SamplerConfig {
  double guidance = 1.5;  // w; 0 reduces to the unconditional prediction
  double p_uncond = 0.1;  // training-time conditioning drop probability
  uint64_t seed = 0;
};

// Mean-squared noise-prediction loss, averaged over all N*3 scalars.
// t is drawn uniformly from {0..T-1}; with probability p_uncond the class
// is replaced by the null class. Draws come from the "train.t", "train.eps"
// and "train.drop" streams of pool.
Tensor loss_simple(const ModelParams& params, const Tensor& x0,
                   std::optional<int> y, const NoiseSchedule& sched,
                   double p_uncond, RngPool& pool);

// One ancestral step x_t -> x_{t-1}:
//   eps_hat = eps_u + w (eps_c - eps_u)
//   mu = (x_t - beta_t / sqrt(1-alpha_bar_t) eps_hat) / sqrt(alpha_t)
//   x_{t-1} = mu + sigma_t z   (z = 0 at t = 0)
// w = 0 and the unconditional case take a single model evaluation with the
// null class; w = 1 takes a single conditional evaluation.
Tensor p_sample_step(const ModelParams& params, const Tensor& x_t, int t,
                     std::optional<int> y, const NoiseSchedule& sched,
                     double guidance, Rng& rng);

// Full ancestral sampler from x_T ~ N(0,I), de-normalized with the dataset
// statistics. Throws when stats is absent. Each cloud consumes its own
// "sample.<i>" stream, so clouds are independent of one another.
std::vector<PointCloud> sample(const ModelParams& params, int num,
                               std::optional<int> y,
                               const NoiseSchedule& sched,
                               const SamplerConfig& cfg,
                               const std::optional<NormalizationStats>& stats,
                               int num_points);

// --- diagnostics (not part of the training loss) ---------------------------

// KL(N(mean1,var1) || N(mean2,var2)) in closed form.
double gaussian_kl(double mean1, double var1, double mean2, double var2);

// Mean and variance of the forward posterior q(x_{t-1} | x_t, x0), t >= 1.
std::pair<double, double> q_posterior(double x_t, double x0, int t,
                                      const NoiseSchedule& sched);

// Per-term bound contribution KL(q(x_{t-1}|x_t,x0) || N(mu_theta, sigma_t^2)).
double kl_term(double x_t, double x0, double mu_theta, int t,
               const NoiseSchedule& sched);

}  // namespace dim3d
