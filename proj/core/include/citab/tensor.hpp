// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "citab/errors.hpp"

namespace citab {

namespace detail {

struct TensorNode {
  std::vector<int> shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until first use
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;  // null for leaves

  bool is_leaf() const { return !backprop; }
  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
  }
};

}  // namespace detail

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kAttentionMaskBias = -1e9;

/// Dense row-major f64 tensor with reverse-mode autodiff.
///
/// A Tensor is a cheap handle onto a graph node. Ops record the graph only
/// when an operand requires grad; tensors built from plain data act as
/// constants. Values are immutable after creation except for explicit leaf
/// updates between graph lifetimes (optimizer steps, finite differencing)
/// and the gradient buffer. All stored values must be finite; any op that
/// produces NaN/Inf throws ValueError.
///
/// Rank-1 tensors behave as 1xN rows in the 2-D ops.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<int> shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double v, bool requires_grad = false);
  static Tensor row(std::vector<double> values, bool requires_grad = false);     // 1xN
  static Tensor column(std::vector<double> values, bool requires_grad = false);  // Nx1
  static Tensor identity(int n);
  static Tensor gaussian(std::vector<int> shape, class Rng& rng, double stddev,
                         bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const;
  int rank() const;
  size_t size() const;
  int rows() const;
  int cols() const;

  const std::vector<double>& values() const;
  double value_at(int r, int c) const;
  double scalar_value() const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  const std::vector<double>& grad() const;
  void zero_grad();

  // Leaf-only in-place update, for optimizers and finite differencing.
  // The caller must not hold live graphs built on the old values.
  std::vector<double>& mutable_values();

  std::shared_ptr<detail::TensorNode> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// --- Core ops. All record the graph when any operand requires grad. ---

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// add/mul accept equal shapes, a 1xN row broadcast across rows of `a`,
// or a 1x1 scalar broadcast (broadcast operand must be `b`).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double c);
Tensor scale(const Tensor& a, double c);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);  // requires strictly positive input
Tensor exp(const Tensor& a);
Tensor pow_scalar(const Tensor& a, double p);
Tensor clamp(const Tensor& a, double lo, double hi);  // zero gradient outside (lo, hi)

Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
// Last-axis normalization with learnable gain/bias (1xN each), eps 1e-5.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

Tensor row_sums(const Tensor& a);             // MxN -> Mx1
Tensor sum_all(const Tensor& a);              // -> 1x1
Tensor mean_pool(const Tensor& a, int axis);  // axis 0: 1xN column means; axis 1: Mx1 row means
Tensor scale_rows(const Tensor& x, const Tensor& v);  // row i scaled by v[i], v Mx1
Tensor slice_rows(const Tensor& x, int r0, int r1);
Tensor slice_cols(const Tensor& x, int c0, int c1);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

Tensor l2_normalize_rows(const Tensor& x);

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

/// Multi-head scaled dot-product attention with additive -1e9 bias on
/// invalid key columns. When q and k have the same length (self-attention)
/// the key mask doubles as the query mask and invalid query rows come out
/// exactly zero. q/k/v share the model dimension, which must be divisible
/// by `heads`.
Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const std::vector<bool>& key_valid, int heads);

/// Backpropagate from a scalar loss. Gradients of requires-grad leaves
/// accumulate (+=); interior gradients live only as long as the graph.
/// Accumulation order is fixed by the deterministic topological order.
void backward(const Tensor& loss);

/// Max over coordinates of |analytic - central difference| divided by
/// max(|analytic|, |cd|, 1e-8). `f` must be a pure scalar-valued function;
/// `x` must be a requires-grad leaf.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps);

std::string shape_string(const std::vector<int>& shape);

}  // namespace citab
