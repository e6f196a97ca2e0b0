#include "dim3d/ssm.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "dim3d/flop_counter.hpp"
#include "dim3d/tensor.hpp"

namespace dim3d::ssm {

namespace {

// Dense helpers for the small-N verification path (N <= a few dozen).

std::vector<double> mat_mul(const std::vector<double>& a,
                            const std::vector<double>& b, int n) {
  std::vector<double> y(n * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int l = 0; l < n; ++l) {
      const double ail = a[i * n + l];
      for (int j = 0; j < n; ++j) y[i * n + j] += ail * b[l * n + j];
    }
  return y;
}

std::vector<double> mat_vec(const std::vector<double>& a,
                            const std::vector<double>& v, int n) {
  std::vector<double> y(n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) y[i] += a[i * n + j] * v[j];
  return y;
}

double inf_norm(const std::vector<double>& a, int n) {
  double best = 0.0;
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < n; ++j) row += std::abs(a[i * n + j]);
    best = std::max(best, row);
  }
  return best;
}

// exp(M) by scaling-and-squaring with a truncated Taylor series. Terms are
// added until they fall below 1e-16 relative to the running sum, well inside
// the 1e-12 contract once the argument is scaled to norm <= 0.5.
std::vector<double> mat_exp(std::vector<double> m, int n) {
  int squarings = 0;
  double norm = inf_norm(m, n);
  while (norm > 0.5) {
    for (double& v : m) v *= 0.5;
    norm *= 0.5;
    ++squarings;
  }
  std::vector<double> result(n * n, 0.0);
  for (int i = 0; i < n; ++i) result[i * n + i] = 1.0;
  std::vector<double> term = result;
  for (int k = 1; k <= 64; ++k) {
    term = mat_mul(term, m, n);
    for (double& v : term) v /= k;
    for (int i = 0; i < n * n; ++i) result[i] += term[i];
    if (inf_norm(term, n) < 1e-16 * std::max(1.0, inf_norm(result, n))) break;
  }
  for (int s = 0; s < squarings; ++s) result = mat_mul(result, result, n);
  return result;
}

// Solves M x = rhs by Gaussian elimination with partial pivoting.
std::vector<double> solve(std::vector<double> m, std::vector<double> rhs,
                          int n) {
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(m[r * n + col]) > std::abs(m[pivot * n + col])) pivot = r;
    if (std::abs(m[pivot * n + col]) < 1e-14)
      throw std::domain_error(
          "delta*A is numerically singular; use the limit form "
          "B_bar = delta*B (valid when ||delta*A|| < 1e-8)");
    if (pivot != col) {
      for (int j = 0; j < n; ++j) std::swap(m[col * n + j], m[pivot * n + j]);
      std::swap(rhs[col], rhs[pivot]);
    }
    const double d = m[col * n + col];
    for (int r = col + 1; r < n; ++r) {
      const double f = m[r * n + col] / d;
      if (f == 0.0) continue;
      for (int j = col; j < n; ++j) m[r * n + j] -= f * m[col * n + j];
      rhs[r] -= f * rhs[col];
    }
  }
  std::vector<double> x(n);
  for (int i = n - 1; i >= 0; --i) {
    double acc = rhs[i];
    for (int j = i + 1; j < n; ++j) acc -= m[i * n + j] * x[j];
    x[i] = acc / m[i * n + i];
  }
  return x;
}

}  // namespace

ContinuousSSM ContinuousSSM::make_diagonal(std::vector<double> a,
                                           std::vector<double> b,
                                           std::vector<double> c) {
  ContinuousSSM s;
  s.state_size = static_cast<int>(a.size());
  if (b.size() != a.size() || c.size() != a.size())
    throw std::invalid_argument("A/B/C size mismatch in diagonal SSM");
  s.A = std::move(a);
  s.B = std::move(b);
  s.C = std::move(c);
  s.diagonal = true;
  return s;
}

ContinuousSSM ContinuousSSM::make_dense(std::vector<double> a,
                                        std::vector<double> b,
                                        std::vector<double> c, int n) {
  ContinuousSSM s;
  if (static_cast<int>(a.size()) != n * n || static_cast<int>(b.size()) != n ||
      static_cast<int>(c.size()) != n)
    throw std::invalid_argument("A/B/C size mismatch in dense SSM");
  s.state_size = n;
  s.A = std::move(a);
  s.B = std::move(b);
  s.C = std::move(c);
  s.diagonal = false;
  return s;
}

DiscreteSSM discretize_zoh(const ContinuousSSM& sys, double delta) {
  if (delta <= 0.0)
    throw std::invalid_argument("discretize_zoh requires delta > 0, got " +
                                std::to_string(delta));
  const int n = sys.state_size;
  DiscreteSSM d;
  d.state_size = n;
  d.diagonal = sys.diagonal;
  d.delta = delta;
  d.C = sys.C;
  if (sys.diagonal) {
    d.A_bar.resize(n);
    d.B_bar.resize(n);
    for (int i = 0; i < n; ++i) {
      const double da = delta * sys.A[i];
      if (sys.A[i] == 0.0)
        throw std::domain_error(
            "delta*A is numerically singular; use the limit form "
            "B_bar = delta*B (valid when ||delta*A|| < 1e-8)");
      d.A_bar[i] = std::exp(da);
      // (da)^{-1} (e^{da} - 1) * delta * B, with expm1 keeping the
      // delta -> 0 limit accurate.
      d.B_bar[i] = std::expm1(da) / sys.A[i] * sys.B[i];
    }
  } else {
    std::vector<double> da(n * n);
    for (int i = 0; i < n * n; ++i) da[i] = delta * sys.A[i];
    if (inf_norm(da, n) < 1e-8)
      throw std::domain_error(
          "delta*A is numerically singular; use the limit form "
          "B_bar = delta*B (valid when ||delta*A|| < 1e-8)");
    d.A_bar = mat_exp(da, n);
    std::vector<double> rhs(n);
    std::vector<double> em_i = d.A_bar;
    for (int i = 0; i < n; ++i) em_i[i * n + i] -= 1.0;
    std::vector<double> db(n);
    for (int i = 0; i < n; ++i) db[i] = delta * sys.B[i];
    rhs = mat_vec(em_i, db, n);
    d.B_bar = solve(da, rhs, n);
  }
  return d;
}

std::vector<double> scan_recurrence(const DiscreteSSM& sys,
                                    std::span<const double> x) {
  const int n = sys.state_size;
  const int64_t L = static_cast<int64_t>(x.size());
  std::vector<double> y(L, 0.0);
  std::vector<double> h(n, 0.0);
  if (sys.diagonal) {
    for (int64_t t = 0; t < L; ++t) {
      double out = 0.0;
      for (int i = 0; i < n; ++i) {
        h[i] = sys.A_bar[i] * h[i] + sys.B_bar[i] * x[t];
        out += sys.C[i] * h[i];
      }
      y[t] = out;
    }
  } else {
    std::vector<double> hn(n);
    for (int64_t t = 0; t < L; ++t) {
      hn = mat_vec(sys.A_bar, h, n);
      double out = 0.0;
      for (int i = 0; i < n; ++i) {
        hn[i] += sys.B_bar[i] * x[t];
        out += sys.C[i] * hn[i];
      }
      h = hn;
      y[t] = out;
    }
  }
  return y;
}

std::vector<double> build_conv_kernel(const DiscreteSSM& sys, int64_t L) {
  if (L < 1) throw std::invalid_argument("kernel length must be >= 1");
  const int n = sys.state_size;
  std::vector<double> kernel(L, 0.0);
  std::vector<double> v = sys.B_bar;  // A_bar^j B_bar
  for (int64_t j = 0; j < L; ++j) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += sys.C[i] * v[i];
    kernel[j] = acc;
    if (j + 1 < L) {
      if (sys.diagonal) {
        for (int i = 0; i < n; ++i) v[i] *= sys.A_bar[i];
      } else {
        v = mat_vec(sys.A_bar, v, n);
      }
    }
  }
  return kernel;
}

std::vector<double> apply_conv_kernel(std::span<const double> kernel,
                                      std::span<const double> x) {
  if (kernel.size() != x.size())
    throw std::invalid_argument(
        "kernel/input length mismatch: " + std::to_string(kernel.size()) +
        " vs " + std::to_string(x.size()));
  const int64_t L = static_cast<int64_t>(x.size());
  std::vector<double> y(L, 0.0);
  for (int64_t t = 0; t < L; ++t) {
    double acc = 0.0;
    for (int64_t j = 0; j <= t; ++j) acc += kernel[j] * x[t - j];
    y[t] = acc;
  }
  return y;
}

namespace {

void check_selective_shapes(const Tensor& x, const SelectiveParams& p) {
  if (x.rank() != 2)
    throw std::invalid_argument("selective_scan input must be [L,E], got " +
                                shape_str(x.shape()));
  const int64_t L = x.dim(0), E = x.dim(1);
  if (p.delta.shape() != Shape{L, E})
    throw std::invalid_argument("delta shape " + shape_str(p.delta.shape()) +
                                " does not match input " +
                                shape_str(x.shape()));
  if (p.B.rank() != 2 || p.B.dim(0) != L || p.C.shape() != p.B.shape())
    throw std::invalid_argument("B/C must be [L,N]; got " +
                                shape_str(p.B.shape()) + " and " +
                                shape_str(p.C.shape()));
  const int64_t N = p.B.dim(1);
  if (p.A_diag.shape() != Shape{E, N})
    throw std::invalid_argument("A_diag must be [E,N], got " +
                                shape_str(p.A_diag.shape()));
  if (p.D_skip.shape() != Shape{E})
    throw std::invalid_argument("D_skip must be [E], got " +
                                shape_str(p.D_skip.shape()));
  for (double v : p.delta.data())
    if (!(v > 0.0))
      throw std::domain_error("selective_scan requires delta > 0 elementwise");
  for (double v : p.A_diag.data())
    if (!(v < 0.0))
      throw std::domain_error("selective_scan requires A_diag < 0 elementwise");
}

}  // namespace

Tensor selective_scan(const Tensor& x, const SelectiveParams& p) {
  check_selective_shapes(x, p);
  const int64_t L = x.dim(0), E = x.dim(1), N = p.B.dim(1);

  const double* px = x.data().data();
  const double* pdt = p.delta.data().data();
  const double* pB = p.B.data().data();
  const double* pC = p.C.data().data();
  const double* pA = p.A_diag.data().data();
  const double* pD = p.D_skip.data().data();

  const bool rg = grad_enabled() &&
                  (x.requires_grad() || p.delta.requires_grad() ||
                   p.B.requires_grad() || p.C.requires_grad() ||
                   p.A_diag.requires_grad() || p.D_skip.requires_grad());

  std::vector<double> out(L * E, 0.0);
  // Hidden states are kept for the whole sequence only when a backward pass
  // will need them.
  auto hsaved = std::make_shared<std::vector<double>>();
  if (rg) hsaved->assign(L * E * N, 0.0);
  std::vector<double> h(E * N, 0.0);

  for (int64_t t = 0; t < L; ++t) {
    for (int64_t e = 0; e < E; ++e) {
      const double dt = pdt[t * E + e];
      const double xv = px[t * E + e];
      const double dbx = dt * xv;
      double acc = 0.0;
      double* he = h.data() + e * N;
      const double* arow = pA + e * N;
      for (int64_t n = 0; n < N; ++n) {
        const double abar = std::exp(dt * arow[n]);
        he[n] = abar * he[n] + dbx * pB[t * N + n];
        acc += pC[t * N + n] * he[n];
      }
      out[t * E + e] = acc + pD[e] * xv;
      if (rg)
        std::copy_n(he, N, hsaved->data() + (t * E + e) * N);
    }
  }
  FlopCounter::add(static_cast<uint64_t>(L) * E * (6 * N + 3));

  Tensor y = Tensor::from({L, E}, std::move(out));
  y.set_requires_grad(rg);
  if (rg) {
    auto xs = x.state(), dts = p.delta.state(), Bs = p.B.state(),
         Cs = p.C.state(), As = p.A_diag.state(), Ds = p.D_skip.state(),
         ys = y.state();
    Tape::active().record([xs, dts, Bs, Cs, As, Ds, ys, hsaved, L, E, N]() {
      if (ys->grad.empty()) return;
      const double* px2 = xs->data.data();
      const double* pdt2 = dts->data.data();
      const double* pB2 = Bs->data.data();
      const double* pC2 = Cs->data.data();
      const double* pA2 = As->data.data();
      const double* pD2 = Ds->data.data();
      const double* gy = ys->grad.data();
      const double* hs = hsaved->data();

      std::vector<double> gx(L * E, 0.0), gdt(L * E, 0.0);
      std::vector<double> gB(L * N, 0.0), gC(L * N, 0.0);
      std::vector<double> gA(E * N, 0.0), gD(E, 0.0);
      std::vector<double> gh(E * N, 0.0);  // dL/dh_t carried backward

      for (int64_t t = L - 1; t >= 0; --t) {
        for (int64_t e = 0; e < E; ++e) {
          const double g = gy[t * E + e];
          const double dt = pdt2[t * E + e];
          const double xv = px2[t * E + e];
          gD[e] += g * xv;
          gx[t * E + e] += g * pD2[e];
          double gdt_acc = 0.0;
          double gx_acc = 0.0;
          double* ghe = gh.data() + e * N;
          const double* arow = pA2 + e * N;
          const double* hrow = hs + (t * E + e) * N;
          const double* hprev = t > 0 ? hs + ((t - 1) * E + e) * N : nullptr;
          for (int64_t n = 0; n < N; ++n) {
            double ghn = ghe[n] + g * pC2[t * N + n];
            gC[t * N + n] += g * hrow[n];
            const double abar = std::exp(dt * arow[n]);
            const double hp = hprev ? hprev[n] : 0.0;
            const double gabar = ghn * hp;
            gA[e * N + n] += gabar * abar * dt;
            gdt_acc += gabar * abar * arow[n];
            gdt_acc += ghn * pB2[t * N + n] * xv;
            gB[t * N + n] += ghn * dt * xv;
            gx_acc += ghn * dt * pB2[t * N + n];
            ghe[n] = ghn * abar;
          }
          gdt[t * E + e] += gdt_acc;
          gx[t * E + e] += gx_acc;
        }
      }

      auto accum = [](const std::shared_ptr<detail::TensorState>& st,
                      const std::vector<double>& g) {
        if (!st->requires_grad) return;
        st->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) st->grad[i] += g[i];
      };
      accum(xs, gx);
      accum(dts, gdt);
      accum(Bs, gB);
      accum(Cs, gC);
      accum(As, gA);
      accum(Ds, gD);
    });
  }
  return y;
}

Tensor bidirectional_scan(const Tensor& x, const SelectiveParams& fwd,
                          const SelectiveParams& bwd) {
  Tensor forward = selective_scan(x, fwd);
  Tensor backward = reverse_rows(selective_scan(reverse_rows(x), bwd));
  return add(forward, backward);
}

}  // namespace dim3d::ssm
