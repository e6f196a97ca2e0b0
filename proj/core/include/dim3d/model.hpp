#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dim3d/tensor.hpp"
#include "dim3d/voxel.hpp"

namespace dim3d {

// Architecture hyperparameters. The named size presets follow the standard
// ladder; "custom" frees layers/hidden for small test models.
struct DiMConfig {
  std::string size_tag = "S";
  int layers = 16;
  int hidden = 384;  // D
  int patch = 4;     // P
  int voxel = 32;    // V
  int state_size = 16;  // N per channel
  int expand = 2;       // E = expand * hidden
  int conv_width = 4;   // k
  int num_classes = 1;  // M (a null row is appended internally)
  int channels = 3;     // voxel feature channels

  static DiMConfig preset(const std::string& tag, int patch, int voxel,
                          int num_classes);

  int expanded() const { return expand * hidden; }
  int64_t tokens() const {
    const int64_t g = voxel / patch;
    return g * g * g;
  }
  int64_t patch_len() const {
    return static_cast<int64_t>(patch) * patch * patch * channels;
  }
  void validate() const;
};

// Number of prepended conditioning tokens (time, class).
inline constexpr int kCondTokens = 2;
// Width of the raw sinusoidal time features fed to the time MLP.
inline constexpr int kTimeFeatureDim = 128;

struct BlockDirParams {
  Tensor conv_w;   // [E,k] depthwise taps
  Tensor W_delta;  // [E,1] rank-1 step head
  Tensor b_delta;  // [E]
  Tensor W_B;      // [E,N]
  Tensor W_C;      // [E,N]
  Tensor A_log;    // [E,N]; A = -exp(A_log)
  Tensor D_skip;   // [E]
};

struct BlockParams {
  Tensor norm_gain, norm_bias;  // [D]
  Tensor W_z, W_v;              // [D,E]
  BlockDirParams dir[2];        // forward, backward
  Tensor W_out;                 // [E,D], zero-initialized
};

struct ModelParams {
  DiMConfig cfg;
  Tensor W_embed;  // [P^3*C, D]
  Tensor pos;      // [L,D]
  Tensor time_W1, time_b1, time_W2, time_b2;
  Tensor class_table;  // [M+1, D]; last row is the null class
  std::vector<BlockParams> blocks;
  Tensor final_gain, final_bias;  // [D]
  Tensor W_head;                  // [D, P^3*C], zero-initialized

  // Deterministic initialization: Gaussian(0, 0.02) projections, zero
  // biases, zero W_out/W_head (identity residual at init), A spanning
  // -1..-N per channel, softplus(b_delta) log-uniform in [1e-3, 1e-1].
  static ModelParams init(const DiMConfig& cfg, uint64_t seed);

  void for_each_param(
      const std::function<void(const std::string&, Tensor&)>& fn);
  void set_requires_grad(bool v);
  int64_t allocated_params();  // sum of numel over all parameter tensors
};

// Sinusoidal features of the timestep passed through a 2-layer SiLU MLP.
// Requires 0 <= t < max_steps.
Tensor time_embed(const ModelParams& params, int t, int max_steps);

// Raw interleaved (sin, cos) features, exposed for tests.
std::vector<double> time_features(int t);

// One bidirectional selective-scan block (pre-norm, gated, residual).
// tokens is [K+L, D] with conditioning tokens in front.
Tensor dim_block(const Tensor& tokens, const BlockParams& bp);

// Noise prediction for noisy points x_t [N,3]. Points are clamped to
// [-1,1] for the voxel grid and gather queries only. y_class empty selects
// the null-conditioning row.
Tensor model_forward(const ModelParams& params, const Tensor& x_t, int t,
                     std::optional<int> y_class, int max_steps);

// Token-space forward (everything between voxelize and devoxelize),
// exposed so the analytic cost model can be checked against the
// instrumented kernels.
Tensor model_forward_tokens(const ModelParams& params, const VoxelGrid& grid,
                            int t, std::optional<int> y_class, int max_steps);

// Closed-form parameter counts; param_count must equal the allocation walk.
int64_t block_param_count(const DiMConfig& cfg);
int64_t param_count(const DiMConfig& cfg);

}  // namespace dim3d
