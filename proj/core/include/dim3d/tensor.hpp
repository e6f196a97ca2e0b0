#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dim3d/rng.hpp"

namespace dim3d {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct TensorState {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until first accumulation

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Dense row-major tensor of doubles. The payload is immutable once an
// operation has consumed it; grad is the only field mutated afterwards.
// Copies are shallow (shared state), matching the tape closures that
// capture the same state.
class Tensor {
 public:
  Tensor() : st_(std::make_shared<detail::TensorState>()) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> data);
  static Tensor scalar(double value) { return from({1}, {value}); }
  // Gaussian entries with standard deviation sigma.
  static Tensor randn(Shape shape, Rng& rng, double sigma = 1.0);

  const Shape& shape() const { return st_->shape; }
  size_t rank() const { return st_->shape.size(); }
  int64_t dim(size_t i) const { return st_->shape[i]; }
  int64_t numel() const { return st_->numel(); }
  bool defined() const { return !st_->shape.empty() || !st_->data.empty(); }

  std::span<const double> data() const { return st_->data; }
  // Mutation is only legal before the tensor enters any operation.
  std::span<double> raw() { return st_->data; }

  double item() const;
  double at(std::initializer_list<int64_t> idx) const;

  bool requires_grad() const { return st_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    st_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !st_->grad.empty(); }
  std::span<const double> grad() const { return st_->grad; }
  std::span<double> grad_mut() {
    st_->ensure_grad();
    return st_->grad;
  }
  void zero_grad() { st_->grad.clear(); }

  const std::shared_ptr<detail::TensorState>& state() const { return st_; }

 private:
  std::shared_ptr<detail::TensorState> st_;
};

// Reverse-mode tape. Nodes are backward closures stored in creation order;
// replay walks them once in reverse. One tape per thread.
class Tape {
 public:
  static Tape& active();

  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and replays every node in reverse creation
  // order, then clears the tape. loss must hold exactly one element.
  void backward(Tensor& loss);

 private:
  std::vector<std::function<void()>> nodes_;
};

// Scoped switch that disables tape recording (inference paths).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// Runs backward on the active tape.
void backward(Tensor& loss);

// --- operation set -------------------------------------------------------

// Batched matrix product. Trailing two axes multiply, leading axes broadcast
// numpy-style. Throws std::invalid_argument naming both shapes on mismatch.
Tensor matmul(const Tensor& a, const Tensor& b);

// Depthwise causal 1-D convolution: x is [L,E], w is [E,k];
// y[t,e] = sum_j w[e,j] * x[t-(k-1)+j, e] with implicit zero left-padding.
Tensor conv1d_depthwise(const Tensor& x, const Tensor& w);

Tensor silu(const Tensor& x);
// Overflow-safe softplus: max(x,0) + log1p(exp(-|x|)).
Tensor softplus(const Tensor& x);
// Elementwise exp. Finite for |x| <= 709; larger magnitudes overflow to Inf
// as in std::exp.
Tensor exp(const Tensor& x);
// Normalizes over the last axis to zero mean / unit variance, then applies
// gain and bias (both sized like the last axis).
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 double eps = 1e-10);

Tensor add(const Tensor& a, const Tensor& b);       // same shape
Tensor add_bias(const Tensor& x, const Tensor& b);  // [R,C] + [C]
// [R,1] column + [C] row -> [R,C]
Tensor broadcast_add(const Tensor& col, const Tensor& row);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, same shape
Tensor scale(const Tensor& x, double s);

Tensor sum_all(const Tensor& x);   // -> shape {1}
Tensor mean_all(const Tensor& x);  // -> shape {1}

Tensor reverse_rows(const Tensor& x);  // flip along axis 0
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& x, int64_t start, int64_t count);
// y.flat[i] = x.flat[idx[i]]. idx is shared so tape closures stay cheap.
Tensor gather_flat(const Tensor& x,
                   std::shared_ptr<const std::vector<int64_t>> idx,
                   Shape out_shape);
Tensor reshape(const Tensor& x, Shape shape);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace dim3d
