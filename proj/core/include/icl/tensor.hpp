#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "icl/check.hpp"
#include "icl/config.hpp"
#include "icl/rng.hpp"

namespace icl {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Reverse-mode autodiff over a closed op set, organized as an explicit
// dynamic tape: every op that sees a grad-requiring input (while grad mode
// is on) records its parents and a backward closure on the result node.
// backward() walks the recorded graph once in reverse topological order.
// Graphs are built per forward pass and freed with the tensors.
struct TensorNode {
  Shape shape;
  std::vector<real> value;
  std::vector<real> grad; // lazily allocated, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop; // accumulates into parents' grads

  int64_t numel() const { return int64_t(value.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), real(0));
  }
};

// Value-semantic handle to a shared tensor node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> n) : n_(std::move(n)) {}

  static Tensor from_data(Shape shape, std::vector<real> data, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, real v, bool requires_grad = false);
  static Tensor scalar(real v);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int64_t numel() const { return n_->numel(); }
  int64_t dim(size_t i) const { return n_->shape[i]; }
  size_t rank() const { return n_->shape.size(); }

  std::span<const real> value() const { return n_->value; }
  // Mutating values is only sound for leaves (parameters, buffers).
  std::span<real> value_mut() { return n_->value; }
  real item() const;

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool rg);

  bool has_grad() const { return !n_->grad.empty(); }
  std::span<const real> grad() const;
  std::span<real> grad_mut();
  void zero_grad();

  bool is_leaf() const { return n_->parents.empty(); }

  // Same values, fresh leaf, no graph, requires_grad off.
  Tensor detach() const;
  // Deep copy leaf (value only).
  Tensor clone() const;

  bool same_node(const Tensor& o) const { return n_ == o.n_; }
  std::shared_ptr<TensorNode> node() const { return n_; }

 private:
  std::shared_ptr<TensorNode> n_;
};

// ---- grad mode ------------------------------------------------------------

bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
  NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Debug-mode NaN/Inf detection: when enabled, every op scans its output and
// throws NumericError on a non-finite value. Off by default (hot path).
bool finite_checks_enabled();
void set_finite_checks(bool on);

// ---- ops ------------------------------------------------------------------

// Elementwise, same shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// x * s, x + s with scalar s.
Tensor scale(const Tensor& x, real s);
Tensor add_scalar(const Tensor& x, real s);

// 2-D matrix product [m x k]·[k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);
// a · b^T for b stored [n x k]: [m x k]·[n x k]^T -> [m x n].
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Broadcast a vector v (shape [d] or [1 x d]) across every row of x [n x d].
Tensor add_rows(const Tensor& x, const Tensor& v);
Tensor mul_rows(const Tensor& x, const Tensor& v);

// Row-axis concat/slice for 2-D tensors.
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& x, int64_t start, int64_t count);
// Column-axis concat/slice for 2-D tensors.
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, int64_t start, int64_t count);

Tensor reshape(const Tensor& x, Shape shape);

// Softmax along `axis` (negative counts from the back), max-subtracted.
Tensor softmax(const Tensor& x, int axis = -1);

// Layer norm over the last axis with affine gain/bias (shape [d]).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, real eps = real(1e-5));

// tanh-approximation GELU: 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);

// Row gather from table [V x d]; backward scatter-adds into the table grad.
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);

// Mean of squared differences -> scalar tensor (shape [1]).
Tensor mse_loss(const Tensor& pred, const Tensor& target);

// Reverse pass from a scalar loss. Repeated calls without zero_grad
// accumulate into leaf grads.
void backward(const Tensor& loss);

// ---- rng-backed constructors ----------------------------------------------

Tensor rng_normal(Rng& rng, Shape shape, real stddev = real(1), bool requires_grad = false);
Tensor rng_uniform(Rng& rng, Shape shape, real lo, real hi, bool requires_grad = false);
// Normal(0, stddev) truncated to +/- 2 stddev by resampling.
Tensor rng_trunc_normal(Rng& rng, Shape shape, real stddev, bool requires_grad = false);

} // namespace icl
