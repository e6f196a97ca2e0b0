#include "dim3d/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "dim3d/flop_counter.hpp"

namespace dim3d {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

namespace {

using detail::TensorState;
using StatePtr = std::shared_ptr<TensorState>;

void check_positive_extents(const Shape& shape) {
  for (int64_t d : shape) {
    if (d <= 0)
      throw std::invalid_argument("tensor extents must be positive, got " +
                                  shape_str(shape));
  }
}

thread_local int nograd_depth = 0;

// Accumulates src into dst->grad (lazily allocated).
void accum_grad(const StatePtr& dst, std::span<const double> src) {
  dst->ensure_grad();
  for (size_t i = 0; i < src.size(); ++i) dst->grad[i] += src[i];
}

bool out_grad_ready(const StatePtr& out) { return !out->grad.empty(); }

}  // namespace

Tensor Tensor::zeros(Shape shape) {
  check_positive_extents(shape);
  Tensor t;
  t.st_->data.assign(shape_numel(shape), 0.0);
  t.st_->shape = std::move(shape);
  return t;
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.st_->data.begin(), t.st_->data.end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  check_positive_extents(shape);
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("data length " + std::to_string(data.size()) +
                                " does not fill shape " + shape_str(shape));
  Tensor t;
  t.st_->shape = std::move(shape);
  t.st_->data = std::move(data);
  return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, double sigma) {
  Tensor t = zeros(std::move(shape));
  for (double& v : t.st_->data) v = sigma * rng.gaussian();
  return t;
}

double Tensor::item() const {
  if (numel() != 1)
    throw std::invalid_argument("item() on non-scalar tensor of shape " +
                                shape_str(shape()));
  return st_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  if (idx.size() != rank())
    throw std::invalid_argument("index rank mismatch for shape " +
                                shape_str(shape()));
  int64_t flat = 0;
  size_t k = 0;
  for (int64_t i : idx) {
    flat = flat * st_->shape[k] + i;
    ++k;
  }
  return st_->data[flat];
}

Tape& Tape::active() {
  thread_local Tape tape;
  return tape;
}

void Tape::backward(Tensor& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument(
        "backward requires a scalar loss, got shape " +
        shape_str(loss.shape()));
  loss.state()->ensure_grad();
  loss.state()->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  clear();
}

NoGradGuard::NoGradGuard() { ++nograd_depth; }
NoGradGuard::~NoGradGuard() { --nograd_depth; }

bool grad_enabled() { return nograd_depth == 0; }

void backward(Tensor& loss) { Tape::active().backward(loss); }

namespace {

bool track(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

Tensor make_result(Shape shape, std::vector<double> data, bool requires_grad) {
  Tensor t = Tensor::from(std::move(shape), std::move(data));
  t.set_requires_grad(requires_grad);
  return t;
}

}  // namespace

// --- matmul ---------------------------------------------------------------

namespace {

struct BatchedMM {
  Shape batch;       // broadcast batch extents
  int64_t m, k, n;
  // per-batch element offsets into a/b (0-stride on broadcast dims)
  std::vector<int64_t> a_off, b_off;
};

BatchedMM plan_matmul(const Shape& sa, const Shape& sb) {
  if (sa.size() < 2 || sb.size() < 2)
    throw std::invalid_argument("matmul needs rank >= 2 operands, got " +
                                shape_str(sa) + " and " + shape_str(sb));
  BatchedMM p;
  p.m = sa[sa.size() - 2];
  p.k = sa[sa.size() - 1];
  const int64_t kb = sb[sb.size() - 2];
  p.n = sb[sb.size() - 1];
  if (p.k != kb)
    throw std::invalid_argument("matmul inner extents disagree: " +
                                shape_str(sa) + " x " + shape_str(sb));
  const size_t ra = sa.size() - 2, rb = sb.size() - 2;
  const size_t rbatch = std::max(ra, rb);
  p.batch.assign(rbatch, 1);
  for (size_t i = 0; i < rbatch; ++i) {
    const int64_t da = i < rbatch - ra ? 1 : sa[i - (rbatch - ra)];
    const int64_t db = i < rbatch - rb ? 1 : sb[i - (rbatch - rb)];
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument("matmul batch extents not broadcastable: " +
                                  shape_str(sa) + " x " + shape_str(sb));
    p.batch[i] = std::max(da, db);
  }
  const int64_t nbatch = shape_numel(p.batch);
  p.a_off.resize(nbatch);
  p.b_off.resize(nbatch);
  for (int64_t bi = 0; bi < nbatch; ++bi) {
    int64_t rem = bi, ai = 0, bj = 0;
    for (size_t i = 0; i < rbatch; ++i) {
      int64_t stride = 1;
      for (size_t j = i + 1; j < rbatch; ++j) stride *= p.batch[j];
      const int64_t c = rem / stride;
      rem %= stride;
      const int64_t da = i < rbatch - ra ? 1 : sa[i - (rbatch - ra)];
      const int64_t db = i < rbatch - rb ? 1 : sb[i - (rbatch - rb)];
      ai = ai * da + (da == 1 ? 0 : c);
      bj = bj * db + (db == 1 ? 0 : c);
    }
    p.a_off[bi] = ai * p.m * p.k;
    p.b_off[bi] = bj * p.k * p.n;
  }
  return p;
}

void mm_kernel(const double* a, const double* b, double* y, int64_t m,
               int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    double* yrow = y + i * n;
    const double* arow = a + i * k;
    for (int64_t l = 0; l < k; ++l) {
      const double ail = arow[l];
      const double* brow = b + l * n;
      for (int64_t j = 0; j < n; ++j) yrow[j] += ail * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const BatchedMM p = plan_matmul(a.shape(), b.shape());
  const int64_t nbatch = static_cast<int64_t>(p.a_off.size());
  Shape oshape = p.batch;
  oshape.push_back(p.m);
  oshape.push_back(p.n);
  std::vector<double> out(nbatch * p.m * p.n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (int64_t bi = 0; bi < nbatch; ++bi)
    mm_kernel(pa + p.a_off[bi], pb + p.b_off[bi], out.data() + bi * p.m * p.n,
              p.m, p.k, p.n);
  FlopCounter::add(2ull * nbatch * p.m * p.k * p.n);

  const bool rg = track({&a, &b});
  Tensor y = make_result(std::move(oshape), std::move(out), rg);
  if (rg) {
    auto as = a.state(), bs = b.state(), ys = y.state();
    Tape::active().record([as, bs, ys, p]() {
      if (!out_grad_ready(ys)) return;
      const int64_t nb = static_cast<int64_t>(p.a_off.size());
      const double* gy = ys->grad.data();
      if (as->requires_grad) {
        as->ensure_grad();
        const double* pb2 = bs->data.data();
        for (int64_t bi = 0; bi < nb; ++bi) {
          double* ga = as->grad.data() + p.a_off[bi];
          const double* g = gy + bi * p.m * p.n;
          const double* bm = pb2 + p.b_off[bi];
          // dA[i,l] += sum_j gY[i,j] * B[l,j]
          for (int64_t i = 0; i < p.m; ++i)
            for (int64_t l = 0; l < p.k; ++l) {
              double acc = 0.0;
              const double* grow = g + i * p.n;
              const double* brow = bm + l * p.n;
              for (int64_t j = 0; j < p.n; ++j) acc += grow[j] * brow[j];
              ga[i * p.k + l] += acc;
            }
        }
        FlopCounter::add(2ull * nb * p.m * p.k * p.n);
      }
      if (bs->requires_grad) {
        bs->ensure_grad();
        const double* pa2 = as->data.data();
        for (int64_t bi = 0; bi < nb; ++bi) {
          double* gb = bs->grad.data() + p.b_off[bi];
          const double* g = gy + bi * p.m * p.n;
          const double* am = pa2 + p.a_off[bi];
          // dB[l,j] += sum_i A[i,l] * gY[i,j]
          for (int64_t i = 0; i < p.m; ++i) {
            const double* grow = g + i * p.n;
            for (int64_t l = 0; l < p.k; ++l) {
              const double ail = am[i * p.k + l];
              double* gbrow = gb + l * p.n;
              for (int64_t j = 0; j < p.n; ++j) gbrow[j] += ail * grow[j];
            }
          }
        }
        FlopCounter::add(2ull * nb * p.m * p.k * p.n);
      }
    });
  }
  return y;
}

// --- conv1d_depthwise -------------------------------------------------------

Tensor conv1d_depthwise(const Tensor& x, const Tensor& w) {
  if (x.rank() != 2 || w.rank() != 2)
    throw std::invalid_argument("conv1d_depthwise expects x [L,E], w [E,k]; got " +
                                shape_str(x.shape()) + " and " +
                                shape_str(w.shape()));
  const int64_t L = x.dim(0), E = x.dim(1), k = w.dim(1);
  if (w.dim(0) != E)
    throw std::invalid_argument("conv1d_depthwise channel mismatch: x " +
                                shape_str(x.shape()) + " vs w " +
                                shape_str(w.shape()));
  if (k < 1) throw std::invalid_argument("conv1d_depthwise needs k >= 1");

  std::vector<double> out(L * E, 0.0);
  const double* px = x.data().data();
  const double* pw = w.data().data();
  for (int64_t t = 0; t < L; ++t) {
    double* yrow = out.data() + t * E;
    for (int64_t j = 0; j < k; ++j) {
      const int64_t s = t - (k - 1) + j;
      if (s < 0) continue;  // zero padding
      const double* xrow = px + s * E;
      for (int64_t e = 0; e < E; ++e) yrow[e] += pw[e * k + j] * xrow[e];
    }
  }
  FlopCounter::add(2ull * L * E * k);

  const bool rg = track({&x, &w});
  Tensor y = make_result({L, E}, std::move(out), rg);
  if (rg) {
    auto xs = x.state(), ws = w.state(), ys = y.state();
    Tape::active().record([xs, ws, ys, L, E, k]() {
      if (!out_grad_ready(ys)) return;
      const double* gy = ys->grad.data();
      if (xs->requires_grad) {
        xs->ensure_grad();
        const double* pw2 = ws->data.data();
        for (int64_t t = 0; t < L; ++t) {
          const double* grow = gy + t * E;
          for (int64_t j = 0; j < k; ++j) {
            const int64_t s = t - (k - 1) + j;
            if (s < 0) continue;
            double* gxrow = xs->grad.data() + s * E;
            for (int64_t e = 0; e < E; ++e) gxrow[e] += pw2[e * k + j] * grow[e];
          }
        }
      }
      if (ws->requires_grad) {
        ws->ensure_grad();
        const double* px2 = xs->data.data();
        for (int64_t t = 0; t < L; ++t) {
          const double* grow = gy + t * E;
          for (int64_t j = 0; j < k; ++j) {
            const int64_t s = t - (k - 1) + j;
            if (s < 0) continue;
            const double* xrow = px2 + s * E;
            for (int64_t e = 0; e < E; ++e)
              ws->grad[e * k + j] += grow[e] * xrow[e];
          }
        }
      }
    });
  }
  return y;
}

// --- pointwise suite --------------------------------------------------------

namespace {

double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Tensor silu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto px = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = px[i] * sigmoid(px[i]);
  FlopCounter::add(static_cast<uint64_t>(x.numel()));

  const bool rg = track({&x});
  Tensor y = make_result(x.shape(), std::move(out), rg);
  if (rg) {
    auto xs = x.state(), ys = y.state();
    Tape::active().record([xs, ys]() {
      if (!out_grad_ready(ys)) return;
      xs->ensure_grad();
      for (size_t i = 0; i < xs->data.size(); ++i) {
        const double s = sigmoid(xs->data[i]);
        xs->grad[i] += ys->grad[i] * s * (1.0 + xs->data[i] * (1.0 - s));
      }
    });
  }
  return y;
}

Tensor softplus(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto px = x.data();
  for (int64_t i = 0; i < x.numel(); ++i)
    out[i] = std::max(px[i], 0.0) + std::log1p(std::exp(-std::abs(px[i])));
  FlopCounter::add(static_cast<uint64_t>(x.numel()));

  const bool rg = track({&x});
  Tensor y = make_result(x.shape(), std::move(out), rg);
  if (rg) {
    auto xs = x.state(), ys = y.state();
    Tape::active().record([xs, ys]() {
      if (!out_grad_ready(ys)) return;
      xs->ensure_grad();
      for (size_t i = 0; i < xs->data.size(); ++i)
        xs->grad[i] += ys->grad[i] * sigmoid(xs->data[i]);
    });
  }
  return y;
}

Tensor exp(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto px = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = std::exp(px[i]);

  const bool rg = track({&x});
  Tensor y = make_result(x.shape(), std::move(out), rg);
  if (rg) {
    auto xs = x.state(), ys = y.state();
    Tape::active().record([xs, ys]() {
      if (!out_grad_ready(ys)) return;
      xs->ensure_grad();
      for (size_t i = 0; i < xs->data.size(); ++i)
        xs->grad[i] += ys->grad[i] * ys->data[i];
    });
  }
  return y;
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 double eps) {
  if (x.rank() < 1)
    throw std::invalid_argument("layernorm needs rank >= 1 input");
  if (eps <= 0.0) throw std::invalid_argument("layernorm eps must be > 0");
  const int64_t C = x.dim(x.rank() - 1);
  const int64_t R = x.numel() / C;
  if (gain.numel() != C || bias.numel() != C)
    throw std::invalid_argument("layernorm gain/bias must match last axis " +
                                std::to_string(C) + ", got " +
                                shape_str(gain.shape()) + " and " +
                                shape_str(bias.shape()));

  std::vector<double> out(x.numel());
  auto mu = std::make_shared<std::vector<double>>(R);
  auto rstd = std::make_shared<std::vector<double>>(R);
  const double* px = x.data().data();
  const double* pg = gain.data().data();
  const double* pb = bias.data().data();
  for (int64_t r = 0; r < R; ++r) {
    const double* row = px + r * C;
    double m = 0.0;
    for (int64_t j = 0; j < C; ++j) m += row[j];
    m /= C;
    double v = 0.0;
    for (int64_t j = 0; j < C; ++j) {
      const double d = row[j] - m;
      v += d * d;
    }
    v /= C;
    const double rs = 1.0 / std::sqrt(v + eps);
    (*mu)[r] = m;
    (*rstd)[r] = rs;
    double* yrow = out.data() + r * C;
    for (int64_t j = 0; j < C; ++j)
      yrow[j] = (row[j] - m) * rs * pg[j] + pb[j];
  }
  FlopCounter::add(7ull * R * C);

  const bool rg = track({&x, &gain, &bias});
  Tensor y = make_result(x.shape(), std::move(out), rg);
  if (rg) {
    auto xs = x.state(), gs = gain.state(), bs = bias.state(), ys = y.state();
    Tape::active().record([xs, gs, bs, ys, mu, rstd, R, C]() {
      if (!out_grad_ready(ys)) return;
      const double* px2 = xs->data.data();
      const double* pg2 = gs->data.data();
      const double* gy = ys->grad.data();
      std::vector<double> yhat(C), dyhat(C);
      for (int64_t r = 0; r < R; ++r) {
        const double* row = px2 + r * C;
        const double* grow = gy + r * C;
        const double m = (*mu)[r], rs = (*rstd)[r];
        double mean_dy = 0.0, mean_dyy = 0.0;
        for (int64_t j = 0; j < C; ++j) {
          yhat[j] = (row[j] - m) * rs;
          dyhat[j] = grow[j] * pg2[j];
          mean_dy += dyhat[j];
          mean_dyy += dyhat[j] * yhat[j];
        }
        mean_dy /= C;
        mean_dyy /= C;
        if (xs->requires_grad) {
          xs->ensure_grad();
          double* gx = xs->grad.data() + r * C;
          for (int64_t j = 0; j < C; ++j)
            gx[j] += rs * (dyhat[j] - mean_dy - yhat[j] * mean_dyy);
        }
        if (gs->requires_grad) {
          gs->ensure_grad();
          for (int64_t j = 0; j < C; ++j) gs->grad[j] += grow[j] * yhat[j];
        }
        if (bs->requires_grad) {
          bs->ensure_grad();
          for (int64_t j = 0; j < C; ++j) bs->grad[j] += grow[j];
        }
      }
    });
  }
  return y;
}

// --- elementwise / structural ----------------------------------------------

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + " shape mismatch: " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a.data()[i] + b.data()[i];
  FlopCounter::add(static_cast<uint64_t>(a.numel()));

  const bool rg = track({&a, &b});
  Tensor y = make_result(a.shape(), std::move(out), rg);
  if (rg) {
    auto as = a.state(), bs = b.state(), ys = y.state();
    Tape::active().record([as, bs, ys]() {
      if (!out_grad_ready(ys)) return;
      if (as->requires_grad) accum_grad(as, ys->grad);
      if (bs->requires_grad) accum_grad(bs, ys->grad);
    });
  }
  return y;
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  if (x.rank() < 1 || b.rank() != 1 || b.dim(0) != x.dim(x.rank() - 1))
    throw std::invalid_argument("add_bias expects [..,C] + [C]; got " +
                                shape_str(x.shape()) + " and " +
                                shape_str(b.shape()));
  const int64_t C = b.dim(0), R = x.numel() / C;
  std::vector<double> out(x.numel());
  for (int64_t r = 0; r < R; ++r)
    for (int64_t j = 0; j < C; ++j)
      out[r * C + j] = x.data()[r * C + j] + b.data()[j];
  FlopCounter::add(static_cast<uint64_t>(x.numel()));

  const bool rg = track({&x, &b});
  Tensor y = make_result(x.shape(), std::move(out), rg);
  if (rg) {
    auto xs = x.state(), bs = b.state(), ys = y.state();
    Tape::active().record([xs, bs, ys, R, C]() {
      if (!out_grad_ready(ys)) return;
      if (xs->requires_grad) accum_grad(xs, ys->grad);
      if (bs->requires_grad) {
        bs->ensure_grad();
        for (int64_t r = 0; r < R; ++r)
          for (int64_t j = 0; j < C; ++j) bs->grad[j] += ys->grad[r * C + j];
      }
    });
  }
  return y;
}

Tensor broadcast_add(const Tensor& col, const Tensor& row) {
  if (col.rank() != 2 || col.dim(1) != 1 || row.rank() != 1)
    throw std::invalid_argument("broadcast_add expects [R,1] + [C]; got " +
                                shape_str(col.shape()) + " and " +
                                shape_str(row.shape()));
  const int64_t R = col.dim(0), C = row.dim(0);
  std::vector<double> out(R * C);
  for (int64_t r = 0; r < R; ++r)
    for (int64_t j = 0; j < C; ++j)
      out[r * C + j] = col.data()[r] + row.data()[j];
  FlopCounter::add(static_cast<uint64_t>(R * C));

  const bool rg = track({&col, &row});
  Tensor y = make_result({R, C}, std::move(out), rg);
  if (rg) {
    auto cs = col.state(), rs = row.state(), ys = y.state();
    Tape::active().record([cs, rs, ys, R, C]() {
      if (!out_grad_ready(ys)) return;
      if (cs->requires_grad) {
        cs->ensure_grad();
        for (int64_t r = 0; r < R; ++r) {
          double acc = 0.0;
          for (int64_t j = 0; j < C; ++j) acc += ys->grad[r * C + j];
          cs->grad[r] += acc;
        }
      }
      if (rs->requires_grad) {
        rs->ensure_grad();
        for (int64_t r = 0; r < R; ++r)
          for (int64_t j = 0; j < C; ++j) rs->grad[j] += ys->grad[r * C + j];
      }
    });
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a.data()[i] - b.data()[i];
  FlopCounter::add(static_cast<uint64_t>(a.numel()));

  const bool rg = track({&a, &b});
  Tensor y = make_result(a.shape(), std::move(out), rg);
  if (rg) {
    auto as = a.state(), bs = b.state(), ys = y.state();
    Tape::active().record([as, bs, ys]() {
      if (!out_grad_ready(ys)) return;
      if (as->requires_grad) accum_grad(as, ys->grad);
      if (bs->requires_grad) {
        bs->ensure_grad();
        for (size_t i = 0; i < ys->grad.size(); ++i) bs->grad[i] -= ys->grad[i];
      }
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a.data()[i] * b.data()[i];
  FlopCounter::add(static_cast<uint64_t>(a.numel()));

  const bool rg = track({&a, &b});
  Tensor y = make_result(a.shape(), std::move(out), rg);
  if (rg) {
    auto as = a.state(), bs = b.state(), ys = y.state();
    Tape::active().record([as, bs, ys]() {
      if (!out_grad_ready(ys)) return;
      if (as->requires_grad) {
        as->ensure_grad();
        for (size_t i = 0; i < ys->grad.size(); ++i)
          as->grad[i] += ys->grad[i] * bs->data[i];
      }
      if (bs->requires_grad) {
        bs->ensure_grad();
        for (size_t i = 0; i < ys->grad.size(); ++i)
          bs->grad[i] += ys->grad[i] * as->data[i];
      }
    });
  }
  return y;
}

Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.numel());
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = s * x.data()[i];
  FlopCounter::add(static_cast<uint64_t>(x.numel()));

  const bool rg = track({&x});
  Tensor y = make_result(x.shape(), std::move(out), rg);
  if (rg) {
    auto xs = x.state(), ys = y.state();
    Tape::active().record([xs, ys, s]() {
      if (!out_grad_ready(ys)) return;
      xs->ensure_grad();
      for (size_t i = 0; i < ys->grad.size(); ++i)
        xs->grad[i] += s * ys->grad[i];
    });
  }
  return y;
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  FlopCounter::add(static_cast<uint64_t>(x.numel()));

  const bool rg = track({&x});
  Tensor y = make_result({1}, {acc}, rg);
  if (rg) {
    auto xs = x.state(), ys = y.state();
    Tape::active().record([xs, ys]() {
      if (!out_grad_ready(ys)) return;
      xs->ensure_grad();
      for (double& g : xs->grad) g += ys->grad[0];
    });
  }
  return y;
}

Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor reverse_rows(const Tensor& x) {
  if (x.rank() < 1) throw std::invalid_argument("reverse_rows needs rank >= 1");
  const int64_t R = x.dim(0);
  const int64_t stride = x.numel() / R;
  std::vector<double> out(x.numel());
  for (int64_t r = 0; r < R; ++r)
    std::copy_n(x.data().data() + r * stride, stride,
                out.data() + (R - 1 - r) * stride);

  const bool rg = track({&x});
  Tensor y = make_result(x.shape(), std::move(out), rg);
  if (rg) {
    auto xs = x.state(), ys = y.state();
    Tape::active().record([xs, ys, R, stride]() {
      if (!out_grad_ready(ys)) return;
      xs->ensure_grad();
      for (int64_t r = 0; r < R; ++r) {
        const double* g = ys->grad.data() + (R - 1 - r) * stride;
        double* gx = xs->grad.data() + r * stride;
        for (int64_t j = 0; j < stride; ++j) gx[j] += g[j];
      }
    });
  }
  return y;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() < 1)
    throw std::invalid_argument("concat_rows rank mismatch: " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  for (size_t i = 1; i < a.rank(); ++i)
    if (a.dim(i) != b.dim(i))
      throw std::invalid_argument("concat_rows trailing extents disagree: " +
                                  shape_str(a.shape()) + " vs " +
                                  shape_str(b.shape()));
  Shape oshape = a.shape();
  oshape[0] = a.dim(0) + b.dim(0);
  std::vector<double> out;
  out.reserve(a.numel() + b.numel());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());

  const bool rg = track({&a, &b});
  Tensor y = make_result(std::move(oshape), std::move(out), rg);
  if (rg) {
    auto as = a.state(), bs = b.state(), ys = y.state();
    const size_t na = a.numel();
    Tape::active().record([as, bs, ys, na]() {
      if (!out_grad_ready(ys)) return;
      if (as->requires_grad) {
        as->ensure_grad();
        for (size_t i = 0; i < na; ++i) as->grad[i] += ys->grad[i];
      }
      if (bs->requires_grad) {
        bs->ensure_grad();
        for (size_t i = 0; i < bs->data.size(); ++i)
          bs->grad[i] += ys->grad[na + i];
      }
    });
  }
  return y;
}

Tensor slice_rows(const Tensor& x, int64_t start, int64_t count) {
  if (x.rank() < 1) throw std::invalid_argument("slice_rows needs rank >= 1");
  const int64_t R = x.dim(0);
  if (start < 0 || count < 1 || start + count > R)
    throw std::invalid_argument("slice_rows range [" + std::to_string(start) +
                                "," + std::to_string(start + count) +
                                ") out of bounds for " + shape_str(x.shape()));
  const int64_t stride = x.numel() / R;
  Shape oshape = x.shape();
  oshape[0] = count;
  std::vector<double> out(x.data().begin() + start * stride,
                          x.data().begin() + (start + count) * stride);

  const bool rg = track({&x});
  Tensor y = make_result(std::move(oshape), std::move(out), rg);
  if (rg) {
    auto xs = x.state(), ys = y.state();
    Tape::active().record([xs, ys, start, stride]() {
      if (!out_grad_ready(ys)) return;
      xs->ensure_grad();
      for (size_t i = 0; i < ys->grad.size(); ++i)
        xs->grad[start * stride + i] += ys->grad[i];
    });
  }
  return y;
}

Tensor gather_flat(const Tensor& x,
                   std::shared_ptr<const std::vector<int64_t>> idx,
                   Shape out_shape) {
  if (shape_numel(out_shape) != static_cast<int64_t>(idx->size()))
    throw std::invalid_argument("gather_flat index count " +
                                std::to_string(idx->size()) +
                                " does not fill shape " +
                                shape_str(out_shape));
  std::vector<double> out(idx->size());
  for (size_t i = 0; i < idx->size(); ++i) out[i] = x.data()[(*idx)[i]];

  const bool rg = track({&x});
  Tensor y = make_result(std::move(out_shape), std::move(out), rg);
  if (rg) {
    auto xs = x.state(), ys = y.state();
    Tape::active().record([xs, ys, idx]() {
      if (!out_grad_ready(ys)) return;
      xs->ensure_grad();
      for (size_t i = 0; i < idx->size(); ++i)
        xs->grad[(*idx)[i]] += ys->grad[i];
    });
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw std::invalid_argument("reshape " + shape_str(x.shape()) + " -> " +
                                shape_str(shape) + " changes element count");
  std::vector<double> out(x.data().begin(), x.data().end());

  const bool rg = track({&x});
  Tensor y = make_result(std::move(shape), std::move(out), rg);
  if (rg) {
    auto xs = x.state(), ys = y.state();
    Tape::active().record([xs, ys]() {
      if (!out_grad_ready(ys)) return;
      accum_grad(xs, ys->grad);
    });
  }
  return y;
}

}  // namespace dim3d
