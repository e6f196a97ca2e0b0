#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "dim3d/rng.hpp"
#include "dim3d/tensor.hpp"

namespace dim3d::testing {

inline Tensor uniform_tensor(Shape shape, Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.raw()) v = rng.uniform(lo, hi);
  return t;
}

// Central finite differences against reverse-mode gradients.
// fn re-evaluates the computation from the current contents of `inputs`;
// the loss is a fixed random weighting of the output so every element
// contributes. Tolerance: |a - f| <= rtol*max(|a|,|f|) + atol.
inline void check_gradients(const std::function<Tensor()>& fn,
                            std::vector<Tensor> inputs, uint64_t seed,
                            double step = 1e-5, double rtol = 1e-6,
                            double atol = 1e-9) {
  for (Tensor& t : inputs) t.set_requires_grad(true);
  Tensor out = fn();
  Rng wrng(seed);
  Tensor w = uniform_tensor(out.shape(), wrng);
  Tensor loss = sum_all(mul(out, w));
  for (Tensor& t : inputs) t.zero_grad();
  backward(loss);

  NoGradGuard nograd;
  auto weighted = [&]() {
    const Tensor o = fn();
    double acc = 0.0;
    for (int64_t i = 0; i < o.numel(); ++i) acc += o.data()[i] * w.data()[i];
    return acc;
  };
  for (size_t which = 0; which < inputs.size(); ++which) {
    Tensor& t = inputs[which];
    ASSERT_TRUE(t.has_grad()) << "input " << which << " received no gradient";
    auto grad = t.grad();
    auto data = t.raw();
    for (int64_t i = 0; i < t.numel(); ++i) {
      const double saved = data[i];
      data[i] = saved + step;
      const double up = weighted();
      data[i] = saved - step;
      const double down = weighted();
      data[i] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double a = grad[i];
      const double err = std::abs(a - fd);
      const double bound = rtol * std::max(std::abs(a), std::abs(fd)) + atol;
      ASSERT_LE(err, bound) << "input " << which << " element " << i
                            << ": analytic " << a << " vs fd " << fd;
    }
  }
}

inline void expect_all_finite(const Tensor& t) {
  for (double v : t.data()) ASSERT_TRUE(std::isfinite(v));
}

}  // namespace dim3d::testing
