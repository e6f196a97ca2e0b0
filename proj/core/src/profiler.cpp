#include "dim3d/profiler.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dim3d::prof {

std::string flops_str(flops_t v) {
  if (v == 0) return "0";
  std::string s;
  while (v > 0) {
    s.push_back(static_cast<char>('0' + static_cast<int>(v % 10)));
    v /= 10;
  }
  std::reverse(s.begin(), s.end());
  return s;
}

flops_t flops_matmul(int64_t m, int64_t k, int64_t n) {
  return flops_t(2) * m * k * n;
}
flops_t flops_conv1d(int64_t L, int64_t E, int64_t k) {
  return flops_t(2) * L * E * k;
}
flops_t flops_selective_scan(int64_t L, int64_t E, int64_t N) {
  return flops_t(L) * E * (6 * N + 3);
}
flops_t flops_layernorm(int64_t rows, int64_t cols) {
  return flops_t(7) * rows * cols;
}
flops_t flops_elementwise(int64_t n) { return flops_t(n); }

flops_t flops_dim_block(const DiMConfig& cfg, int64_t S) {
  const int64_t D = cfg.hidden, E = cfg.expanded(), N = cfg.state_size,
                k = cfg.conv_width;
  flops_t total = flops_layernorm(S, D);
  total += 2 * flops_matmul(S, D, E);  // W_z, W_v
  for (int dir = 0; dir < 2; ++dir) {
    total += flops_conv1d(S, E, k);
    total += flops_elementwise(S * E);  // silu after conv
    total += flops_matmul(S, E, 1);     // step head
    total += flops_elementwise(S * E);  // broadcast bias
    total += flops_elementwise(S * E);  // softplus
    total += 2 * flops_matmul(S, E, N);  // B_t, C_t
    total += flops_elementwise(E * N);   // -exp(A_log) negation
    total += flops_selective_scan(S, E, N);
  }
  total += flops_elementwise(S * E);   // merge directions
  total += flops_elementwise(S * E);   // silu gate
  total += flops_elementwise(S * E);   // gating product
  total += flops_matmul(S, E, D);      // W_out
  total += flops_elementwise(S * D);   // residual
  return total;
}

flops_t flops_dim_model(const DiMConfig& cfg, int64_t L) {
  const int64_t D = cfg.hidden, PL = cfg.patch_len();
  const int64_t S = L + kCondTokens;
  flops_t total = flops_matmul(L, PL, D);  // patch embedding
  total += flops_elementwise(L * D);       // + positional embedding
  // time embedding MLP
  total += flops_matmul(1, kTimeFeatureDim, D);
  total += flops_elementwise(D);  // bias
  total += flops_elementwise(D);  // silu
  total += flops_matmul(1, D, D);
  total += flops_elementwise(D);  // bias
  total += flops_t(cfg.layers) * flops_dim_block(cfg, S);
  total += flops_layernorm(S, D);
  total += flops_matmul(L, D, PL);  // output head
  return total;
}

flops_t flops_attention_model(int64_t layers, int64_t hidden, int64_t L) {
  const flops_t proj = flops_t(4) * L * hidden * hidden;
  const flops_t attn = flops_t(4) * L * L * hidden;
  const flops_t mlp = flops_t(16) * L * hidden * hidden;
  return flops_t(layers) * (proj + attn + mlp);
}

int64_t crossover_tokens(const DiMConfig& cfg) {
  // dim(L) is affine, attention(L) = alpha L^2 + beta L with alpha > 0, so
  // attention - dim is negative exactly on integer points inside the root
  // interval. L* is the largest integer where attention <= dim.
  const flops_t f1 = flops_dim_model(cfg, 1);
  const flops_t f2 = flops_dim_model(cfg, 2);
  const long double slope = static_cast<long double>(f2 - f1);
  const long double intercept = static_cast<long double>(f1) - slope;
  const long double alpha = 4.0L * cfg.layers * cfg.hidden;
  const long double beta =
      20.0L * cfg.layers * static_cast<long double>(cfg.hidden) * cfg.hidden;
  const long double b = beta - slope;
  const long double disc = b * b + 4.0L * alpha * intercept;
  long double r2 = disc > 0.0L ? (-b + std::sqrt(disc)) / (2.0L * alpha) : 0.0L;
  const int64_t hi = std::max<int64_t>(1, static_cast<int64_t>(r2) + 4);
  const int64_t lo = std::max<int64_t>(1, hi - 8);
  auto att_le_dim = [&](int64_t L) {
    return flops_attention_model(cfg.layers, cfg.hidden, L) <=
           flops_dim_model(cfg, L);
  };
  for (int64_t L = hi; L >= lo; --L)
    if (att_le_dim(L)) return L;
  return 0;
}

ScalingReport scaling_report(const std::vector<DiMConfig>& cfgs,
                             const std::vector<int>& voxel_sizes) {
  ScalingReport rep;
  for (const DiMConfig& cfg : cfgs) {
    const std::string model = cfg.size_tag + "/" + std::to_string(cfg.patch);
    for (int V : voxel_sizes) {
      if (V % cfg.patch != 0)
        throw std::invalid_argument("voxel size " + std::to_string(V) +
                                    " not divisible by patch " +
                                    std::to_string(cfg.patch));
      const int64_t g = V / cfg.patch;
      const int64_t L = g * g * g;
      ScalingRow row;
      row.model = model;
      row.voxel = V;
      row.tokens = L;
      row.dim_flops = flops_dim_model(cfg, L);
      row.attention_flops =
          flops_attention_model(cfg.layers, cfg.hidden, L);
      rep.rows.push_back(std::move(row));
    }
    rep.crossover.emplace_back(model, crossover_tokens(cfg));
  }
  return rep;
}

std::string ScalingReport::csv() const {
  std::ostringstream os;
  os << "model,voxel,tokens,dim_flops,attention_flops\n";
  for (const ScalingRow& r : rows)
    os << r.model << ',' << r.voxel << ',' << r.tokens << ','
       << flops_str(r.dim_flops) << ',' << flops_str(r.attention_flops)
       << '\n';
  os << "\nmodel,crossover_tokens\n";
  for (const auto& [model, L] : crossover)
    os << model << ',' << L << '\n';
  return os.str();
}

}  // namespace dim3d::prof
