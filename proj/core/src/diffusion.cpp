#include "dim3d/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dim3d {

NoiseSchedule make_schedule(int steps) {
  if (steps < 1)
    throw std::invalid_argument("schedule needs at least one step, got " +
                                std::to_string(steps));
  NoiseSchedule s;
  s.steps = steps;
  s.beta.resize(steps);
  s.alpha.resize(steps);
  s.alpha_bar.resize(steps);
  s.sigma.resize(steps);
  const double beta_lo = 1e-4, beta_hi = 2e-2;
  double prod = 1.0;
  for (int t = 0; t < steps; ++t) {
    s.beta[t] = steps == 1
                    ? beta_lo
                    : beta_lo + (beta_hi - beta_lo) * t / (steps - 1);
    s.alpha[t] = 1.0 - s.beta[t];
    prod *= s.alpha[t];
    s.alpha_bar[t] = prod;
    if (t == 0) {
      s.sigma[t] = 0.0;
    } else {
      const double var =
          (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * s.beta[t];
      s.sigma[t] = std::sqrt(var);
    }
  }
  return s;
}

namespace {

void check_t(int t, const NoiseSchedule& sched, const char* who) {
  if (t < 0 || t >= sched.steps)
    throw std::out_of_range(std::string(who) + ": timestep " +
                            std::to_string(t) + " outside [0," +
                            std::to_string(sched.steps) + ")");
}

}  // namespace

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps,
                const NoiseSchedule& sched) {
  check_t(t, sched, "q_sample");
  if (x0.shape() != eps.shape())
    throw std::invalid_argument("q_sample: x0 " + shape_str(x0.shape()) +
                                " and eps " + shape_str(eps.shape()) +
                                " must match");
  const double a = std::sqrt(sched.alpha_bar[t]);
  const double b = std::sqrt(1.0 - sched.alpha_bar[t]);
  std::vector<double> out(x0.numel());
  for (int64_t i = 0; i < x0.numel(); ++i)
    out[i] = a * x0.data()[i] + b * eps.data()[i];
  return Tensor::from(x0.shape(), std::move(out));
}

Tensor loss_simple(const ModelParams& params, const Tensor& x0,
                   std::optional<int> y, const NoiseSchedule& sched,
                   double p_uncond, RngPool& pool) {
  const int t = static_cast<int>(
      pool.stream("train.t").uniform_index(sched.steps));
  if (y.has_value() && p_uncond > 0.0 &&
      pool.stream("train.drop").uniform() < p_uncond)
    y.reset();
  Tensor eps = Tensor::randn(x0.shape(), pool.stream("train.eps"));
  Tensor x_t = q_sample(x0, t, eps, sched);
  Tensor eps_hat = model_forward(params, x_t, t, y, sched.steps);
  Tensor diff = sub(eps_hat, eps);
  return mean_all(mul(diff, diff));
}

Tensor p_sample_step(const ModelParams& params, const Tensor& x_t, int t,
                     std::optional<int> y, const NoiseSchedule& sched,
                     double guidance, Rng& rng) {
  check_t(t, sched, "p_sample_step");
  NoGradGuard nograd;

  Tensor eps_hat;
  if (guidance == 0.0 || !y.has_value()) {
    eps_hat = model_forward(params, x_t, t, std::nullopt, sched.steps);
  } else if (guidance == 1.0) {
    eps_hat = model_forward(params, x_t, t, y, sched.steps);
  } else {
    Tensor eps_c = model_forward(params, x_t, t, y, sched.steps);
    Tensor eps_u = model_forward(params, x_t, t, std::nullopt, sched.steps);
    eps_hat = add(eps_u, scale(sub(eps_c, eps_u), guidance));
  }

  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha[t]);
  const double coeff = sched.beta[t] / std::sqrt(1.0 - sched.alpha_bar[t]);
  const double sigma = sched.sigma[t];
  std::vector<double> out(x_t.numel());
  for (int64_t i = 0; i < x_t.numel(); ++i) {
    const double mu =
        (x_t.data()[i] - coeff * eps_hat.data()[i]) * inv_sqrt_alpha;
    out[i] = t > 0 ? mu + sigma * rng.gaussian() : mu;
  }
  return Tensor::from(x_t.shape(), std::move(out));
}

std::vector<PointCloud> sample(const ModelParams& params, int num,
                               std::optional<int> y,
                               const NoiseSchedule& sched,
                               const SamplerConfig& cfg,
                               const std::optional<NormalizationStats>& stats,
                               int num_points) {
  if (num < 1) throw std::invalid_argument("sample: num must be >= 1");
  if (!stats.has_value())
    throw std::invalid_argument(
        "sample: normalization statistics are required to de-normalize "
        "generated clouds");
  RngPool pool(cfg.seed);
  std::vector<PointCloud> clouds;
  clouds.reserve(num);
  for (int i = 0; i < num; ++i) {
    Rng& rng = pool.stream("sample." + std::to_string(i));
    Tensor x = Tensor::randn({num_points, 3}, rng);
    for (int t = sched.steps - 1; t >= 0; --t)
      x = p_sample_step(params, x, t, y, sched, cfg.guidance, rng);
    clouds.push_back({denormalize_points(x, *stats), y});
  }
  return clouds;
}

double gaussian_kl(double mean1, double var1, double mean2, double var2) {
  return 0.5 * (std::log(var2 / var1) +
                (var1 + (mean1 - mean2) * (mean1 - mean2)) / var2 - 1.0);
}

std::pair<double, double> q_posterior(double x_t, double x0, int t,
                                      const NoiseSchedule& sched) {
  check_t(t, sched, "q_posterior");
  if (t == 0)
    throw std::out_of_range("q_posterior is defined for t >= 1");
  const double ab_t = sched.alpha_bar[t];
  const double ab_prev = sched.alpha_bar[t - 1];
  const double beta_t = sched.beta[t];
  const double mean =
      std::sqrt(ab_prev) * beta_t / (1.0 - ab_t) * x0 +
      std::sqrt(sched.alpha[t]) * (1.0 - ab_prev) / (1.0 - ab_t) * x_t;
  const double var = (1.0 - ab_prev) / (1.0 - ab_t) * beta_t;
  return {mean, var};
}

double kl_term(double x_t, double x0, double mu_theta, int t,
               const NoiseSchedule& sched) {
  const auto [mean, var] = q_posterior(x_t, x0, t, sched);
  return gaussian_kl(mean, var, mu_theta, sched.sigma[t] * sched.sigma[t]);
}

}  // namespace dim3d
