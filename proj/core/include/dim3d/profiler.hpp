#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dim3d/model.hpp"

namespace dim3d::prof {

// Exact operation counts overflow 64 bits for the attention baseline at the
// largest voxel sizes, so totals use 128-bit integers.
using flops_t = unsigned __int128;

std::string flops_str(flops_t v);

// Per-operation costs. These are the same expressions the runtime kernels
// feed into FlopCounter, so analytic totals and instrumented totals are
// directly comparable. Transcendentals are excluded on both sides.
flops_t flops_matmul(int64_t m, int64_t k, int64_t n);       // 2 m k n
flops_t flops_conv1d(int64_t L, int64_t E, int64_t k);       // 2 L E k
flops_t flops_selective_scan(int64_t L, int64_t E, int64_t N);  // L E (6N+3)
flops_t flops_layernorm(int64_t rows, int64_t cols);         // 7 R C
flops_t flops_elementwise(int64_t n);                        // n

// One bidirectional block over S tokens.
flops_t flops_dim_block(const DiMConfig& cfg, int64_t tokens);

// Token-path forward cost at L patch tokens (embedding, conditioning,
// blocks, final norm, output head). Voxelize/devoxelize are per-point and
// independent of L, hence excluded. Exactly affine in L.
flops_t flops_dim_model(const DiMConfig& cfg, int64_t L);

// Self-attention transformer baseline: per block 4 L D^2 (QKV/out
// projections) + 4 L^2 D (scores and values) + 16 L D^2 (MLP, expansion 4).
flops_t flops_attention_model(int64_t layers, int64_t hidden, int64_t L);

// Smallest L* >= 0 such that the DiM forward cost stays strictly below the
// attention baseline for every L > L* (same layers/hidden).
int64_t crossover_tokens(const DiMConfig& cfg);

struct ScalingRow {
  std::string model;  // e.g. "XL/2"
  int voxel = 0;
  int64_t tokens = 0;
  flops_t dim_flops = 0;
  flops_t attention_flops = 0;
};

struct ScalingReport {
  std::vector<ScalingRow> rows;
  std::vector<std::pair<std::string, int64_t>> crossover;  // model -> L*
  std::string csv() const;  // deterministic, byte-identical across runs
};

// Rows for every (config, voxel size) pair; L = (V/P)^3.
ScalingReport scaling_report(const std::vector<DiMConfig>& cfgs,
                             const std::vector<int>& voxel_sizes);

}  // namespace dim3d::prof
