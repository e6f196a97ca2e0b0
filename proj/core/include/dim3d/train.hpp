#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dim3d/diffusion.hpp"
#include "dim3d/io.hpp"
#include "dim3d/model.hpp"
#include "dim3d/rng.hpp"

namespace dim3d {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over all model parameters, keyed by parameter name so the state
// survives checkpoint round-trips.
class Adam {
 public:
  Adam(ModelParams& params, AdamConfig cfg);

  // Applies one update from the accumulated gradients, then clears them.
  void step();

  int64_t step_count() const { return step_count_; }
  void set_step_count(int64_t t) { step_count_ = t; }
  const AdamConfig& config() const { return cfg_; }

  std::map<std::string, std::vector<double>>& moment1() { return m_; }
  std::map<std::string, std::vector<double>>& moment2() { return v_; }

 private:
  ModelParams& params_;
  AdamConfig cfg_;
  std::map<std::string, std::vector<double>> m_, v_;
  int64_t step_count_ = 0;
};

struct TrainOptions {
  int steps = 2000;
  int batch = 8;
  double lr = 1e-4;
  double p_uncond = 0.1;
  int diffusion_steps = 1000;
  uint64_t seed = 0;
};

// Single-threaded noise-prediction trainer over a normalized dataset.
// Batches reuse the whole dataset when batch >= dataset size; otherwise a
// without-replacement subset is drawn per step.
class Trainer {
 public:
  Trainer(ModelParams params, std::vector<PointCloud> normalized_data,
          NormalizationStats stats, TrainOptions opt);

  // One optimizer step; returns the batch loss.
  double step();

  // Full training state (parameters, optimizer moments, RNG streams,
  // normalization statistics, options) as a checkpoint; loading it and
  // continuing reproduces an uninterrupted run bit for bit.
  io::CheckpointData to_checkpoint(
      const std::vector<std::string>& class_names, int points_per_cloud);
  static Trainer from_checkpoint(const io::CheckpointData& data,
                                 std::vector<PointCloud> normalized_data);

  int64_t step_count() const { return opt_.step_count(); }
  ModelParams& params() { return params_; }
  const NoiseSchedule& schedule() const { return sched_; }
  const NormalizationStats& stats() const { return stats_; }
  const TrainOptions& options() const { return options_; }
  const std::vector<PointCloud>& data() const { return data_; }
  Adam& optimizer() { return opt_; }
  RngPool& rng() { return pool_; }

 private:
  ModelParams params_;
  std::vector<PointCloud> data_;
  NormalizationStats stats_;
  TrainOptions options_;
  NoiseSchedule sched_;
  Adam opt_;
  RngPool pool_;
};

// Inference-side view of a checkpoint: everything `sample` needs.
struct SamplerBundle {
  ModelParams params;
  NoiseSchedule schedule;
  NormalizationStats stats;
  int points_per_cloud = 0;
  std::vector<std::string> class_names;
};

SamplerBundle sampler_from_checkpoint(const io::CheckpointData& data);

}  // namespace dim3d
