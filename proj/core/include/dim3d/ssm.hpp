#pragma once

#include <span>
#include <vector>

#include "dim3d/tensor.hpp"

namespace dim3d::ssm {

// Continuous-time linear system  h' = A h + B x,  y = C h.
// A is either a full N x N matrix (row-major) or its diagonal.
struct ContinuousSSM {
  std::vector<double> A;  // N*N dense, or N diagonal entries
  std::vector<double> B;  // N
  std::vector<double> C;  // N
  int state_size = 0;
  bool diagonal = true;

  static ContinuousSSM make_diagonal(std::vector<double> a,
                                     std::vector<double> b,
                                     std::vector<double> c);
  static ContinuousSSM make_dense(std::vector<double> a, std::vector<double> b,
                                  std::vector<double> c, int n);
};

// Zero-order-hold discretization of the above at step delta.
struct DiscreteSSM {
  std::vector<double> A_bar;  // N*N dense, or N diagonal entries
  std::vector<double> B_bar;  // N
  std::vector<double> C;      // N
  int state_size = 0;
  bool diagonal = true;
  double delta = 0.0;
};

// A_bar = exp(delta*A); B_bar = (delta*A)^{-1} (exp(delta*A) - I) delta*B.
// Diagonal systems use the elementwise closed form (expm1-based, so the
// small-delta limit is exact); dense systems use scaling-and-squaring with
// a truncated series (tolerance 1e-12) plus a pivoted linear solve.
// Throws std::domain_error when delta*A is numerically singular
// (norm < 1e-8): use the limit form B_bar = delta*B in that regime.
DiscreteSSM discretize_zoh(const ContinuousSSM& sys, double delta);

// h_t = A_bar h_{t-1} + B_bar x_t, y_t = C h_t, h_0 = 0.
std::vector<double> scan_recurrence(const DiscreteSSM& sys,
                                    std::span<const double> x);

// K = (C B_bar, C A_bar B_bar, ..., C A_bar^{L-1} B_bar).
std::vector<double> build_conv_kernel(const DiscreteSSM& sys, int64_t L);

// Causal convolution y[t] = sum_{j<=t} K[j] x[t-j]; lengths must agree.
std::vector<double> apply_conv_kernel(std::span<const double> kernel,
                                      std::span<const double> x);

// Input-dependent scan parameters. delta, B, C vary per position; the
// diagonal A and the skip path are per-channel.
struct SelectiveParams {
  Tensor delta;   // [L,E], strictly positive
  Tensor B;       // [L,N]
  Tensor C;       // [L,N]
  Tensor A_diag;  // [E,N], strictly negative
  Tensor D_skip;  // [E]
};

// Sequential reference scan. Per channel e and state n:
//   h_t = exp(delta[t,e] A[e,n]) h_{t-1} + delta[t,e] B[t,n] x[t,e]
//   y[t,e] = sum_n C[t,n] h_t + D_skip[e] x[t,e]
// Differentiable in all inputs. The discretization of B uses the Euler
// form delta*B (exact ZOH remains available via discretize_zoh).
Tensor selective_scan(const Tensor& x, const SelectiveParams& p);

// selective_scan(x, fwd) + reverse(selective_scan(reverse(x), bwd)).
Tensor bidirectional_scan(const Tensor& x, const SelectiveParams& fwd,
                          const SelectiveParams& bwd);

}  // namespace dim3d::ssm
