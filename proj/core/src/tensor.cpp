// SPDX-License-Identifier: Apache-2.0
#include "citab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "citab/rng.hpp"

namespace citab {

namespace {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

void check_finite(const std::vector<double>& values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw ValueError(std::string(op) + ": non-finite value encountered");
    }
  }
}

NodePtr make_leaf(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  return n;
}

// Builds the result node; parents/backprop are attached only when a parent
// requires grad, so constant subgraphs stay flat.
Tensor make_op(std::vector<int> shape, std::vector<double> values, const char* op,
               std::vector<NodePtr> parents, std::function<void(TensorNode&)> backprop) {
  check_finite(values, op);
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  n->requires_grad = rg;
  if (rg) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

int node_rows(const TensorNode& n) {
  if (n.shape.size() == 1) return 1;
  if (n.shape.size() == 2) return n.shape[0];
  throw DimensionError("expected rank <= 2 tensor, got shape " + shape_string(n.shape));
}

int node_cols(const TensorNode& n) {
  if (n.shape.size() == 1) return n.shape[0];
  if (n.shape.size() == 2) return n.shape[1];
  throw DimensionError("expected rank <= 2 tensor, got shape " + shape_string(n.shape));
}

const TensorNode& deref(const Tensor& t, const char* op) {
  if (!t.defined()) throw StateError(std::string(op) + ": undefined tensor");
  return *t.node();
}

}  // namespace

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// ---------------------------------------------------------------------------
// Tensor handle
// ---------------------------------------------------------------------------

Tensor::Tensor(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
  size_t count = 1;
  for (int e : shape) {
    if (e <= 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
    count *= static_cast<size_t>(e);
  }
  if (shape.empty() || count != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  check_finite(values, "tensor");
  node_ = make_leaf(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor({1, 1}, {v}, requires_grad);
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double v, bool requires_grad) {
  size_t count = 1;
  for (int e : shape) count *= static_cast<size_t>(std::max(e, 0));
  return Tensor(std::move(shape), std::vector<double>(count, v), requires_grad);
}

Tensor Tensor::row(std::vector<double> values, bool requires_grad) {
  const int n = static_cast<int>(values.size());
  return Tensor({1, n}, std::move(values), requires_grad);
}

Tensor Tensor::column(std::vector<double> values, bool requires_grad) {
  const int n = static_cast<int>(values.size());
  return Tensor({n, 1}, std::move(values), requires_grad);
}

Tensor Tensor::identity(int n) {
  std::vector<double> v(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * n + i] = 1.0;
  return Tensor({n, n}, std::move(v));
}

Tensor Tensor::gaussian(std::vector<int> shape, Rng& rng, double stddev, bool requires_grad) {
  size_t count = 1;
  for (int e : shape) count *= static_cast<size_t>(std::max(e, 0));
  return Tensor(std::move(shape), rng.normal_vector(count, 0.0, stddev), requires_grad);
}

const std::vector<int>& Tensor::shape() const { return deref(*this, "shape").shape; }
int Tensor::rank() const { return static_cast<int>(shape().size()); }
size_t Tensor::size() const { return deref(*this, "size").values.size(); }
int Tensor::rows() const { return node_rows(deref(*this, "rows")); }
int Tensor::cols() const { return node_cols(deref(*this, "cols")); }

const std::vector<double>& Tensor::values() const { return deref(*this, "values").values; }

double Tensor::value_at(int r, int c) const {
  const TensorNode& n = deref(*this, "value_at");
  const int nr = node_rows(n), nc = node_cols(n);
  if (r < 0 || r >= nr || c < 0 || c >= nc) {
    throw DimensionError("value_at(" + std::to_string(r) + "," + std::to_string(c) +
                         ") out of range for shape " + shape_string(n.shape));
  }
  return n.values[static_cast<size_t>(r) * nc + c];
}

double Tensor::scalar_value() const {
  const TensorNode& n = deref(*this, "scalar_value");
  if (n.values.size() != 1) {
    throw DimensionError("scalar_value: tensor has shape " + shape_string(n.shape));
  }
  return n.values[0];
}

bool Tensor::requires_grad() const { return deref(*this, "requires_grad").requires_grad; }
bool Tensor::is_leaf() const { return deref(*this, "is_leaf").is_leaf(); }
bool Tensor::has_grad() const { return !deref(*this, "has_grad").grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  const TensorNode& n = deref(*this, "grad");
  if (n.grad.empty()) throw StateError("grad: no gradient has been accumulated");
  return n.grad;
}

void Tensor::zero_grad() { deref(*this, "zero_grad"); node_->grad.clear(); }

std::vector<double>& Tensor::mutable_values() {
  TensorNode& n = *node_;
  if (!n.is_leaf()) throw StateError("mutable_values: only leaf tensors may be updated in place");
  return n.values;
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& ta, const Tensor& tb) {
  const TensorNode& a = deref(ta, "matmul");
  const TensorNode& b = deref(tb, "matmul");
  const int m = node_rows(a), k = node_cols(a);
  const int k2 = node_rows(b), n = node_cols(b);
  if (k != k2) {
    throw DimensionError("matmul: inner extents disagree, " + shape_string(a.shape) + " x " +
                         shape_string(b.shape));
  }
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double av = a.values[static_cast<size_t>(i) * k + p];
      if (av == 0.0) continue;
      const double* brow = &b.values[static_cast<size_t>(p) * n];
      double* orow = &out[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  auto pa = ta.node();
  auto pb = tb.node();
  return make_op({m, n}, std::move(out), "matmul", {pa, pb}, [pa, pb, m, k, n](TensorNode& self) {
    const std::vector<double>& g = self.grad;
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          double acc = 0.0;
          for (int j = 0; j < n; ++j)
            acc += g[static_cast<size_t>(i) * n + j] * pb->values[static_cast<size_t>(p) * n + j];
          pa->grad[static_cast<size_t>(i) * k + p] += acc;
        }
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (int p = 0; p < k; ++p)
        for (int j = 0; j < n; ++j) {
          double acc = 0.0;
          for (int i = 0; i < m; ++i)
            acc += pa->values[static_cast<size_t>(i) * k + p] * g[static_cast<size_t>(i) * n + j];
          pb->grad[static_cast<size_t>(p) * n + j] += acc;
        }
    }
  });
}

Tensor transpose(const Tensor& ta) {
  const TensorNode& a = deref(ta, "transpose");
  const int m = node_rows(a), n = node_cols(a);
  std::vector<double> out(a.values.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(j) * m + i] = a.values[static_cast<size_t>(i) * n + j];
  auto pa = ta.node();
  return make_op({n, m}, std::move(out), "transpose", {pa}, [pa, m, n](TensorNode& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        pa->grad[static_cast<size_t>(i) * n + j] += self.grad[static_cast<size_t>(j) * m + i];
  });
}

namespace {

enum class Broadcast { kNone, kRow, kScalar };

Broadcast broadcast_mode(const TensorNode& a, const TensorNode& b, const char* op) {
  if (node_rows(a) == node_rows(b) && node_cols(a) == node_cols(b)) return Broadcast::kNone;
  if (b.values.size() == 1) return Broadcast::kScalar;
  if (node_rows(b) == 1 && node_cols(b) == node_cols(a)) return Broadcast::kRow;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a.shape) +
                       " and " + shape_string(b.shape));
}

}  // namespace

Tensor add(const Tensor& ta, const Tensor& tb) {
  const TensorNode& a = deref(ta, "add");
  const TensorNode& b = deref(tb, "add");
  const Broadcast mode = broadcast_mode(a, b, "add");
  const int m = node_rows(a), n = node_cols(a);
  std::vector<double> out(a.values.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      const size_t idx = static_cast<size_t>(i) * n + j;
      const double bv = mode == Broadcast::kNone  ? b.values[idx]
                        : mode == Broadcast::kRow ? b.values[j]
                                                  : b.values[0];
      out[idx] = a.values[idx] + bv;
    }
  auto pa = ta.node();
  auto pb = tb.node();
  return make_op(a.shape, std::move(out), "add", {pa, pb}, [pa, pb, mode, m, n](TensorNode& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const double g = self.grad[static_cast<size_t>(i) * n + j];
          const size_t bi = mode == Broadcast::kNone  ? static_cast<size_t>(i) * n + j
                            : mode == Broadcast::kRow ? static_cast<size_t>(j)
                                                      : 0;
          pb->grad[bi] += g;
        }
    }
  });
}

Tensor mul(const Tensor& ta, const Tensor& tb) {
  const TensorNode& a = deref(ta, "mul");
  const TensorNode& b = deref(tb, "mul");
  const Broadcast mode = broadcast_mode(a, b, "mul");
  const int m = node_rows(a), n = node_cols(a);
  std::vector<double> out(a.values.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      const size_t idx = static_cast<size_t>(i) * n + j;
      const double bv = mode == Broadcast::kNone  ? b.values[idx]
                        : mode == Broadcast::kRow ? b.values[j]
                                                  : b.values[0];
      out[idx] = a.values[idx] * bv;
    }
  auto pa = ta.node();
  auto pb = tb.node();
  return make_op(a.shape, std::move(out), "mul", {pa, pb}, [pa, pb, mode, m, n](TensorNode& self) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        const size_t idx = static_cast<size_t>(i) * n + j;
        const size_t bi = mode == Broadcast::kNone  ? idx
                          : mode == Broadcast::kRow ? static_cast<size_t>(j)
                                                    : 0;
        const double g = self.grad[idx];
        if (pa->requires_grad) {
          pa->ensure_grad();
          pa->grad[idx] += g * pb->values[bi];
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          pb->grad[bi] += g * pa->values[idx];
        }
      }
  });
}

namespace {

// Shared scaffold for elementwise unary ops: forward map + pointwise
// derivative as a function of (input value, output value).
Tensor unary_op(const Tensor& ta, const char* op, const std::function<double(double)>& fwd,
                const std::function<double(double, double)>& dfdx) {
  const TensorNode& a = deref(ta, op);
  std::vector<double> out(a.values.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.values[i]);
  auto pa = ta.node();
  return make_op(a.shape, std::move(out), op, {pa}, [pa, dfdx](TensorNode& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      pa->grad[i] += self.grad[i] * dfdx(pa->values[i], self.values[i]);
  });
}

}  // namespace

Tensor add_scalar(const Tensor& a, double c) {
  if (!std::isfinite(c)) throw ValueError("add_scalar: non-finite constant");
  return unary_op(
      a, "add_scalar", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& a, double c) {
  if (!std::isfinite(c)) throw ValueError("scale: non-finite constant");
  return unary_op(
      a, "scale", [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = std::numbers::sqrt2 / 2.0;
  constexpr double inv_sqrt2pi = 0.3989422804014327;  // 1/sqrt(2*pi)
  return unary_op(
      a, "gelu", [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [=](double x, double) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
      });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, "sigmoid",
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& a) {
  for (double v : deref(a, "log").values) {
    if (v <= 0.0) throw ValueError("log: input must be strictly positive");
  }
  return unary_op(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor pow_scalar(const Tensor& a, double p) {
  if (!std::isfinite(p)) throw ValueError("pow_scalar: non-finite exponent");
  return unary_op(
      a, "pow_scalar", [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (!(lo < hi)) throw ConfigError("clamp: lo must be < hi");
  return unary_op(
      a, "clamp", [=](double x) { return std::min(std::max(x, lo), hi); },
      [=](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor softmax_rows(const Tensor& ta) {
  const TensorNode& a = deref(ta, "softmax_rows");
  const int m = node_rows(a), n = node_cols(a);
  std::vector<double> out(a.values.size());
  for (int i = 0; i < m; ++i) {
    const double* x = &a.values[static_cast<size_t>(i) * n];
    double* y = &out[static_cast<size_t>(i) * n];
    double mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (int j = 0; j < n; ++j) y[j] /= sum;
  }
  auto pa = ta.node();
  return make_op(a.shape, std::move(out), "softmax_rows", {pa}, [pa, m, n](TensorNode& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (int i = 0; i < m; ++i) {
      const double* y = &self.values[static_cast<size_t>(i) * n];
      const double* g = &self.grad[static_cast<size_t>(i) * n];
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += y[j] * g[j];
      double* d = &pa->grad[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) d[j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor log_softmax_rows(const Tensor& ta) {
  const TensorNode& a = deref(ta, "log_softmax_rows");
  const int m = node_rows(a), n = node_cols(a);
  std::vector<double> out(a.values.size());
  for (int i = 0; i < m; ++i) {
    const double* x = &a.values[static_cast<size_t>(i) * n];
    double* y = &out[static_cast<size_t>(i) * n];
    double mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) sum += std::exp(x[j] - mx);
    const double lse = mx + std::log(sum);
    for (int j = 0; j < n; ++j) y[j] = x[j] - lse;
  }
  auto pa = ta.node();
  return make_op(a.shape, std::move(out), "log_softmax_rows", {pa}, [pa, m, n](TensorNode& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (int i = 0; i < m; ++i) {
      const double* y = &self.values[static_cast<size_t>(i) * n];
      const double* g = &self.grad[static_cast<size_t>(i) * n];
      double gsum = 0.0;
      for (int j = 0; j < n; ++j) gsum += g[j];
      double* d = &pa->grad[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) d[j] += g[j] - std::exp(y[j]) * gsum;
    }
  });
}

Tensor layer_norm(const Tensor& tx, const Tensor& tgain, const Tensor& tbias) {
  const TensorNode& x = deref(tx, "layer_norm");
  const TensorNode& gn = deref(tgain, "layer_norm");
  const TensorNode& bs = deref(tbias, "layer_norm");
  const int m = node_rows(x), n = node_cols(x);
  if (node_cols(gn) != n || node_rows(gn) != 1 || node_cols(bs) != n || node_rows(bs) != 1) {
    throw DimensionError("layer_norm: gain/bias must be 1x" + std::to_string(n));
  }
  std::vector<double> out(x.values.size());
  std::vector<double> xhat(x.values.size());
  std::vector<double> inv_std(m);
  for (int i = 0; i < m; ++i) {
    const double* xi = &x.values[static_cast<size_t>(i) * n];
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += xi[j];
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_std[i] = inv;
    for (int j = 0; j < n; ++j) {
      const size_t idx = static_cast<size_t>(i) * n + j;
      xhat[idx] = (xi[j] - mean) * inv;
      out[idx] = xhat[idx] * gn.values[j] + bs.values[j];
    }
  }
  auto px = tx.node();
  auto pg = tgain.node();
  auto pb = tbias.node();
  return make_op(x.shape, std::move(out), "layer_norm", {px, pg, pb},
                 [px, pg, pb, m, n, xhat = std::move(xhat),
                  inv_std = std::move(inv_std)](TensorNode& self) {
                   for (int i = 0; i < m; ++i) {
                     const double* g = &self.grad[static_cast<size_t>(i) * n];
                     const double* xh = &xhat[static_cast<size_t>(i) * n];
                     if (px->requires_grad) {
                       px->ensure_grad();
                       double m1 = 0.0, m2 = 0.0;
                       for (int j = 0; j < n; ++j) {
                         const double gy = g[j] * pg->values[j];
                         m1 += gy;
                         m2 += gy * xh[j];
                       }
                       m1 /= n;
                       m2 /= n;
                       double* d = &px->grad[static_cast<size_t>(i) * n];
                       for (int j = 0; j < n; ++j) {
                         const double gy = g[j] * pg->values[j];
                         d[j] += inv_std[i] * (gy - m1 - xh[j] * m2);
                       }
                     }
                     if (pg->requires_grad) {
                       pg->ensure_grad();
                       for (int j = 0; j < n; ++j) pg->grad[j] += g[j] * xh[j];
                     }
                     if (pb->requires_grad) {
                       pb->ensure_grad();
                       for (int j = 0; j < n; ++j) pb->grad[j] += g[j];
                     }
                   }
                 });
}

Tensor row_sums(const Tensor& ta) {
  const TensorNode& a = deref(ta, "row_sums");
  const int m = node_rows(a), n = node_cols(a);
  std::vector<double> out(m, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[i] += a.values[static_cast<size_t>(i) * n + j];
  auto pa = ta.node();
  return make_op({m, 1}, std::move(out), "row_sums", {pa}, [pa, m, n](TensorNode& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) pa->grad[static_cast<size_t>(i) * n + j] += self.grad[i];
  });
}

Tensor sum_all(const Tensor& ta) {
  const TensorNode& a = deref(ta, "sum_all");
  double s = 0.0;
  for (double v : a.values) s += v;
  auto pa = ta.node();
  return make_op({1, 1}, {s}, "sum_all", {pa}, [pa](TensorNode& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (double& g : pa->grad) g += self.grad[0];
  });
}

Tensor mean_pool(const Tensor& ta, int axis) {
  const TensorNode& a = deref(ta, "mean_pool");
  const int m = node_rows(a), n = node_cols(a);
  if (axis != 0 && axis != 1) throw ConfigError("mean_pool: axis must be 0 or 1");
  auto pa = ta.node();
  if (axis == 0) {
    std::vector<double> out(n, 0.0);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out[j] += a.values[static_cast<size_t>(i) * n + j];
    for (int j = 0; j < n; ++j) out[j] /= m;
    return make_op({1, n}, std::move(out), "mean_pool", {pa}, [pa, m, n](TensorNode& self) {
      if (!pa->requires_grad) return;
      pa->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) pa->grad[static_cast<size_t>(i) * n + j] += self.grad[j] / m;
    });
  }
  std::vector<double> out(m, 0.0);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out[i] += a.values[static_cast<size_t>(i) * n + j];
    out[i] /= n;
  }
  return make_op({m, 1}, std::move(out), "mean_pool", {pa}, [pa, m, n](TensorNode& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) pa->grad[static_cast<size_t>(i) * n + j] += self.grad[i] / n;
  });
}

Tensor scale_rows(const Tensor& tx, const Tensor& tv) {
  const TensorNode& x = deref(tx, "scale_rows");
  const TensorNode& v = deref(tv, "scale_rows");
  const int m = node_rows(x), n = node_cols(x);
  if (static_cast<int>(v.values.size()) != m) {
    throw DimensionError("scale_rows: scale vector has " + std::to_string(v.values.size()) +
                         " entries for " + std::to_string(m) + " rows");
  }
  std::vector<double> out(x.values.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      const size_t idx = static_cast<size_t>(i) * n + j;
      out[idx] = x.values[idx] * v.values[i];
    }
  auto px = tx.node();
  auto pv = tv.node();
  return make_op(x.shape, std::move(out), "scale_rows", {px, pv}, [px, pv, m, n](TensorNode& self) {
    for (int i = 0; i < m; ++i) {
      double vdot = 0.0;
      for (int j = 0; j < n; ++j) {
        const size_t idx = static_cast<size_t>(i) * n + j;
        const double g = self.grad[idx];
        if (px->requires_grad) {
          px->ensure_grad();
          px->grad[idx] += g * pv->values[i];
        }
        vdot += g * px->values[idx];
      }
      if (pv->requires_grad) {
        pv->ensure_grad();
        pv->grad[i] += vdot;
      }
    }
  });
}

Tensor slice_rows(const Tensor& tx, int r0, int r1) {
  const TensorNode& x = deref(tx, "slice_rows");
  const int m = node_rows(x), n = node_cols(x);
  if (r0 < 0 || r1 <= r0 || r1 > m) {
    throw DimensionError("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") invalid for " + std::to_string(m) + " rows");
  }
  std::vector<double> out(static_cast<size_t>(r1 - r0) * n);
  std::copy(x.values.begin() + static_cast<size_t>(r0) * n,
            x.values.begin() + static_cast<size_t>(r1) * n, out.begin());
  auto px = tx.node();
  return make_op({r1 - r0, n}, std::move(out), "slice_rows", {px}, [px, r0, n](TensorNode& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      px->grad[static_cast<size_t>(r0) * n + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& tx, int c0, int c1) {
  const TensorNode& x = deref(tx, "slice_cols");
  const int m = node_rows(x), n = node_cols(x);
  if (c0 < 0 || c1 <= c0 || c1 > n) {
    throw DimensionError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") invalid for " + std::to_string(n) + " cols");
  }
  const int w = c1 - c0;
  std::vector<double> out(static_cast<size_t>(m) * w);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < w; ++j)
      out[static_cast<size_t>(i) * w + j] = x.values[static_cast<size_t>(i) * n + c0 + j];
  auto px = tx.node();
  return make_op({m, w}, std::move(out), "slice_cols", {px}, [px, c0, m, n, w](TensorNode& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        px->grad[static_cast<size_t>(i) * n + c0 + j] += self.grad[static_cast<size_t>(i) * w + j];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  const int n = parts[0].cols();
  int m = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) {
      throw DimensionError("concat_rows: column mismatch, " + shape_string(parts[0].shape()) +
                           " vs " + shape_string(p.shape()));
    }
    m += p.rows();
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(m) * n);
  std::vector<NodePtr> nodes;
  nodes.reserve(parts.size());
  for (const auto& p : parts) {
    out.insert(out.end(), p.values().begin(), p.values().end());
    nodes.push_back(p.node());
  }
  auto nodes_copy = nodes;
  return make_op({m, n}, std::move(out), "concat_rows", std::move(nodes),
                 [nodes = std::move(nodes_copy), n](TensorNode& self) {
                   size_t offset = 0;
                   for (const auto& p : nodes) {
                     const size_t count = p->values.size();
                     if (p->requires_grad) {
                       p->ensure_grad();
                       for (size_t i = 0; i < count; ++i) p->grad[i] += self.grad[offset + i];
                     }
                     offset += count;
                   }
                 });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  const int m = parts[0].rows();
  int n = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row mismatch, " + shape_string(parts[0].shape()) +
                           " vs " + shape_string(p.shape()));
    }
    n += p.cols();
  }
  std::vector<double> out(static_cast<size_t>(m) * n);
  std::vector<NodePtr> nodes;
  std::vector<int> widths;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    widths.push_back(p.cols());
  }
  int c0 = 0;
  for (size_t k = 0; k < parts.size(); ++k) {
    const auto& vals = parts[k].values();
    const int w = widths[k];
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        out[static_cast<size_t>(i) * n + c0 + j] = vals[static_cast<size_t>(i) * w + j];
    c0 += w;
  }
  auto nodes_copy = nodes;
  return make_op({m, n}, std::move(out), "concat_cols", std::move(nodes),
                 [nodes = std::move(nodes_copy), widths, m, n](TensorNode& self) {
                   int c0 = 0;
                   for (size_t k = 0; k < nodes.size(); ++k) {
                     const int w = widths[k];
                     if (nodes[k]->requires_grad) {
                       nodes[k]->ensure_grad();
                       for (int i = 0; i < m; ++i)
                         for (int j = 0; j < w; ++j)
                           nodes[k]->grad[static_cast<size_t>(i) * w + j] +=
                               self.grad[static_cast<size_t>(i) * n + c0 + j];
                     }
                     c0 += w;
                   }
                 });
}

Tensor l2_normalize_rows(const Tensor& x) {
  // eps inside the root keeps zero rows finite; the relative error it adds
  // is ~1e-24 for unit-scale rows.
  Tensor sq = mul(x, x);
  Tensor inv = pow_scalar(add_scalar(row_sums(sq), 1e-24), -0.5);
  return scale_rows(x, inv);
}

Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const std::vector<bool>& key_valid, int heads) {
  const int d = q.cols();
  if (heads < 1 || d % heads != 0) {
    throw ConfigError("masked_attention: dimension " + std::to_string(d) +
                      " not divisible by " + std::to_string(heads) + " heads");
  }
  if (k.cols() != d || v.cols() != d) {
    throw DimensionError("masked_attention: q/k/v dimensions disagree");
  }
  const int lk = k.rows();
  if (v.rows() != lk || static_cast<int>(key_valid.size()) != lk) {
    throw DimensionError("masked_attention: key mask length " +
                         std::to_string(key_valid.size()) + " for " + std::to_string(lk) +
                         " keys");
  }
  const int lq = q.rows();
  const int dh = d / heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<double> bias_row(lk);
  for (int j = 0; j < lk; ++j) bias_row[j] = key_valid[j] ? 0.0 : kAttentionMaskBias;
  const Tensor bias = Tensor::row(std::move(bias_row));

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    const Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    const Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    const Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    Tensor scores = add(scale(matmul(qh, transpose(kh)), inv_sqrt_dh), bias);
    head_outputs.push_back(matmul(softmax_rows(scores), vh));
  }
  Tensor out = heads == 1 ? head_outputs[0] : concat_cols(head_outputs);

  // Self-attention: the key mask doubles as the query mask and invalid
  // query rows are forced to exact zero.
  if (lq == lk) {
    std::vector<double> qmask(lq);
    for (int i = 0; i < lq; ++i) qmask[i] = key_valid[i] ? 1.0 : 0.0;
    out = scale_rows(out, Tensor::column(std::move(qmask)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
  const TensorNode& root = deref(loss, "backward");
  if (root.values.size() != 1) {
    throw DimensionError("backward: loss must be a scalar, got shape " +
                         shape_string(root.shape));
  }
  // Iterative postorder DFS; parent visit order is fixed by construction,
  // which pins the gradient accumulation order.
  std::vector<TensorNode*> topo;
  std::unordered_set<TensorNode*> visited;
  struct Frame {
    TensorNode* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get(), 0});
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorNode* p = f.node->parents[f.next_parent++].get();
      if (!visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      topo.push_back(f.node);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps) {
  if (!x.defined() || !x.is_leaf() || !x.requires_grad()) {
    throw StateError("grad_check: x must be a requires-grad leaf");
  }
  if (!(eps > 0.0)) throw ConfigError("grad_check: eps must be positive");

  x.zero_grad();
  {
    Tensor y = f(x);
    if (y.size() != 1) throw DimensionError("grad_check: f must be scalar-valued");
    backward(y);
  }
  std::vector<double> analytic(x.size(), 0.0);
  if (x.has_grad()) analytic = x.grad();
  x.zero_grad();

  std::vector<double>& vals = x.mutable_values();
  double max_rel = 0.0;
  for (size_t i = 0; i < vals.size(); ++i) {
    const double orig = vals[i];
    vals[i] = orig + eps;
    const double fp = f(x).scalar_value();
    vals[i] = orig - eps;
    const double fm = f(x).scalar_value();
    vals[i] = orig;
    const double cd = (fp - fm) / (2.0 * eps);
    const double denom = std::max({std::fabs(analytic[i]), std::fabs(cd), 1e-8});
    max_rel = std::max(max_rel, std::fabs(analytic[i] - cd) / denom);
  }
  return max_rel;
}

}  // namespace citab
