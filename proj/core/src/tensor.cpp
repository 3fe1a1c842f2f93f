#include "icl/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace icl {

namespace {

using EMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using CMapM = Eigen::Map<const EMat>;
using MapA = Eigen::Map<Eigen::Array<real, Eigen::Dynamic, 1>>;
using CMapA = Eigen::Map<const Eigen::Array<real, Eigen::Dynamic, 1>>;

thread_local bool t_grad_enabled = true;
thread_local bool t_finite_checks = false;

std::shared_ptr<TensorNode> make_node(Shape shape) {
  auto n = std::make_shared<TensorNode>();
  int64_t count = shape_numel(shape);
  n->shape = std::move(shape);
  n->value.resize(size_t(count));
  return n;
}

void check_finite(const TensorNode& n, const char* op) {
  if (!t_finite_checks) return;
  for (real v : n.value) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by op '") + op + "'");
    }
  }
}

// Records the graph edge if grad mode is on and any parent requires grad.
void finish(const std::shared_ptr<TensorNode>& out,
            std::vector<std::shared_ptr<TensorNode>> parents,
            std::function<void(TensorNode&)> backprop, const char* op) {
  check_finite(*out, op);
  if (!t_grad_enabled) return;
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->requires_grad;
  if (!needs) return;
  out->requires_grad = true;
  out->parents = std::move(parents);
  out->backprop = std::move(backprop);
}

CMapM mat(const TensorNode& n) {
  return CMapM(n.value.data(), n.shape[0], n.shape[1]);
}
MapM grad_mat(TensorNode& n) {
  n.ensure_grad();
  return MapM(n.grad.data(), n.shape[0], n.shape[1]);
}
CMapM grad_cmat(const TensorNode& n) {
  return CMapM(n.grad.data(), n.shape[0], n.shape[1]);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  ICL_CHECK(a.shape() == b.shape(), op << ": shape mismatch " << shape_str(a.shape())
                                       << " vs " << shape_str(b.shape()));
}

void check_2d(const Tensor& t, const char* op) {
  ICL_CHECK(t.rank() == 2, op << ": expected 2-D tensor, got " << shape_str(t.shape()));
}

// Broadcast vector argument: [d] or [1 x d].
int64_t row_vec_width(const Tensor& v, const char* op) {
  if (v.rank() == 1) return v.dim(0);
  if (v.rank() == 2 && v.dim(0) == 1) return v.dim(1);
  ICL_CHECK(false, op << ": broadcast vector must be [d] or [1 x d], got " << shape_str(v.shape()));
  return 0;
}

} // namespace

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    ICL_CHECK(d >= 0, "negative extent in shape " << shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream oss;
  oss << "[";
  for (size_t i = 0; i < s.size(); ++i) oss << (i ? " x " : "") << s[i];
  oss << "]";
  return oss.str();
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::from_data(Shape shape, std::vector<real> data, bool requires_grad) {
  int64_t count = shape_numel(shape);
  ICL_CHECK(count == int64_t(data.size()),
            "from_data: shape " << shape_str(shape) << " wants " << count << " scalars, got "
                                << data.size());
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = make_node(std::move(shape));
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::full(Shape shape, real v, bool requires_grad) {
  auto n = make_node(std::move(shape));
  std::fill(n->value.begin(), n->value.end(), v);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::scalar(real v) { return from_data({1}, {v}); }

real Tensor::item() const {
  ICL_CHECK(numel() == 1, "item: tensor has " << numel() << " elements");
  return n_->value[0];
}

void Tensor::set_requires_grad(bool rg) {
  ICL_CHECK(is_leaf(), "set_requires_grad: only leaves may change grad requirement");
  n_->requires_grad = rg;
}

std::span<const real> Tensor::grad() const {
  ICL_CHECK(has_grad(), "grad: no gradient present");
  return n_->grad;
}

std::span<real> Tensor::grad_mut() {
  n_->ensure_grad();
  return n_->grad;
}

void Tensor::zero_grad() {
  if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), real(0));
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<TensorNode>();
  n->shape = n_->shape;
  n->value = n_->value;
  return Tensor(n);
}

Tensor Tensor::clone() const { return detach(); }

// ---- mode flags -------------------------------------------------------------

bool grad_enabled() { return t_grad_enabled; }
void set_grad_enabled(bool on) { t_grad_enabled = on; }
bool finite_checks_enabled() { return t_finite_checks; }
void set_finite_checks(bool on) { t_finite_checks = on; }

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto out = make_node(a.shape());
  MapA(out->value.data(), out->numel()) =
      CMapA(a.value().data(), a.numel()) + CMapA(b.value().data(), b.numel());
  auto pa = a.node(), pb = b.node();
  finish(out, {pa, pb},
         [pa, pb](TensorNode& self) {
           CMapA g(self.grad.data(), self.numel());
           if (pa->requires_grad) {
             pa->ensure_grad();
             MapA(pa->grad.data(), pa->numel()) += g;
           }
           if (pb->requires_grad) {
             pb->ensure_grad();
             MapA(pb->grad.data(), pb->numel()) += g;
           }
         },
         "add");
  return Tensor(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto out = make_node(a.shape());
  MapA(out->value.data(), out->numel()) =
      CMapA(a.value().data(), a.numel()) - CMapA(b.value().data(), b.numel());
  auto pa = a.node(), pb = b.node();
  finish(out, {pa, pb},
         [pa, pb](TensorNode& self) {
           CMapA g(self.grad.data(), self.numel());
           if (pa->requires_grad) {
             pa->ensure_grad();
             MapA(pa->grad.data(), pa->numel()) += g;
           }
           if (pb->requires_grad) {
             pb->ensure_grad();
             MapA(pb->grad.data(), pb->numel()) -= g;
           }
         },
         "sub");
  return Tensor(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto out = make_node(a.shape());
  MapA(out->value.data(), out->numel()) =
      CMapA(a.value().data(), a.numel()) * CMapA(b.value().data(), b.numel());
  auto pa = a.node(), pb = b.node();
  finish(out, {pa, pb},
         [pa, pb](TensorNode& self) {
           CMapA g(self.grad.data(), self.numel());
           if (pa->requires_grad) {
             pa->ensure_grad();
             MapA(pa->grad.data(), pa->numel()) += g * CMapA(pb->value.data(), pb->numel());
           }
           if (pb->requires_grad) {
             pb->ensure_grad();
             MapA(pb->grad.data(), pb->numel()) += g * CMapA(pa->value.data(), pa->numel());
           }
         },
         "mul");
  return Tensor(out);
}

Tensor scale(const Tensor& x, real s) {
  auto out = make_node(x.shape());
  MapA(out->value.data(), out->numel()) = CMapA(x.value().data(), x.numel()) * s;
  auto px = x.node();
  finish(out, {px},
         [px, s](TensorNode& self) {
           px->ensure_grad();
           MapA(px->grad.data(), px->numel()) += CMapA(self.grad.data(), self.numel()) * s;
         },
         "scale");
  return Tensor(out);
}

Tensor add_scalar(const Tensor& x, real s) {
  auto out = make_node(x.shape());
  MapA(out->value.data(), out->numel()) = CMapA(x.value().data(), x.numel()) + s;
  auto px = x.node();
  finish(out, {px},
         [px](TensorNode& self) {
           px->ensure_grad();
           MapA(px->grad.data(), px->numel()) += CMapA(self.grad.data(), self.numel());
         },
         "add_scalar");
  return Tensor(out);
}

// ---- matmul -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  ICL_CHECK(a.dim(1) == b.dim(0), "matmul: inner extents differ, " << shape_str(a.shape())
                                                                   << " vs " << shape_str(b.shape()));
  auto out = make_node({a.dim(0), b.dim(1)});
  MapM(out->value.data(), a.dim(0), b.dim(1)).noalias() = mat(*a.node()) * mat(*b.node());
  auto pa = a.node(), pb = b.node();
  finish(out, {pa, pb},
         [pa, pb](TensorNode& self) {
           CMapM g = grad_cmat(self);
           if (pa->requires_grad) grad_mat(*pa).noalias() += g * mat(*pb).transpose();
           if (pb->requires_grad) grad_mat(*pb).noalias() += mat(*pa).transpose() * g;
         },
         "matmul");
  return Tensor(out);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul_nt");
  check_2d(b, "matmul_nt");
  ICL_CHECK(a.dim(1) == b.dim(1), "matmul_nt: inner extents differ, " << shape_str(a.shape())
                                                                      << " vs " << shape_str(b.shape()));
  auto out = make_node({a.dim(0), b.dim(0)});
  MapM(out->value.data(), a.dim(0), b.dim(0)).noalias() = mat(*a.node()) * mat(*b.node()).transpose();
  auto pa = a.node(), pb = b.node();
  finish(out, {pa, pb},
         [pa, pb](TensorNode& self) {
           CMapM g = grad_cmat(self);
           if (pa->requires_grad) grad_mat(*pa).noalias() += g * mat(*pb);
           if (pb->requires_grad) grad_mat(*pb).noalias() += g.transpose() * mat(*pa);
         },
         "matmul_nt");
  return Tensor(out);
}

// ---- broadcast over rows ------------------------------------------------------

Tensor add_rows(const Tensor& x, const Tensor& v) {
  check_2d(x, "add_rows");
  int64_t d = row_vec_width(v, "add_rows");
  ICL_CHECK(d == x.dim(1), "add_rows: width " << d << " vs cols " << x.dim(1));
  auto out = make_node(x.shape());
  MapM o(out->value.data(), x.dim(0), x.dim(1));
  o = mat(*x.node());
  o.rowwise() += Eigen::Map<const Eigen::Matrix<real, 1, Eigen::Dynamic>>(v.value().data(), d);
  auto px = x.node(), pv = v.node();
  finish(out, {px, pv},
         [px, pv](TensorNode& self) {
           CMapM g = grad_cmat(self);
           if (px->requires_grad) grad_mat(*px) += g;
           if (pv->requires_grad) {
             pv->ensure_grad();
             Eigen::Map<Eigen::Matrix<real, 1, Eigen::Dynamic>>(pv->grad.data(), pv->numel()) +=
                 g.colwise().sum();
           }
         },
         "add_rows");
  return Tensor(out);
}

Tensor mul_rows(const Tensor& x, const Tensor& v) {
  check_2d(x, "mul_rows");
  int64_t d = row_vec_width(v, "mul_rows");
  ICL_CHECK(d == x.dim(1), "mul_rows: width " << d << " vs cols " << x.dim(1));
  auto out = make_node(x.shape());
  MapM o(out->value.data(), x.dim(0), x.dim(1));
  o = mat(*x.node());
  o.array().rowwise() *=
      Eigen::Map<const Eigen::Array<real, 1, Eigen::Dynamic>>(v.value().data(), d);
  auto px = x.node(), pv = v.node();
  finish(out, {px, pv},
         [px, pv](TensorNode& self) {
           CMapM g = grad_cmat(self);
           if (px->requires_grad) {
             grad_mat(*px).array() +=
                 g.array().rowwise() *
                 Eigen::Map<const Eigen::Array<real, 1, Eigen::Dynamic>>(pv->value.data(),
                                                                         pv->numel());
           }
           if (pv->requires_grad) {
             pv->ensure_grad();
             Eigen::Map<Eigen::Matrix<real, 1, Eigen::Dynamic>>(pv->grad.data(), pv->numel()) +=
                 (g.array() * mat(*px).array()).matrix().colwise().sum();
           }
         },
         "mul_rows");
  return Tensor(out);
}

// ---- concat / slice -----------------------------------------------------------

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  check_2d(a, "concat_rows");
  check_2d(b, "concat_rows");
  ICL_CHECK(a.dim(1) == b.dim(1), "concat_rows: column mismatch");
  int64_t ra = a.dim(0), rb = b.dim(0), d = a.dim(1);
  auto out = make_node({ra + rb, d});
  std::copy(a.value().begin(), a.value().end(), out->value.begin());
  std::copy(b.value().begin(), b.value().end(), out->value.begin() + size_t(ra * d));
  auto pa = a.node(), pb = b.node();
  finish(out, {pa, pb},
         [pa, pb, ra, rb, d](TensorNode& self) {
           if (pa->requires_grad) {
             pa->ensure_grad();
             MapA(pa->grad.data(), ra * d) += CMapA(self.grad.data(), ra * d);
           }
           if (pb->requires_grad) {
             pb->ensure_grad();
             MapA(pb->grad.data(), rb * d) += CMapA(self.grad.data() + ra * d, rb * d);
           }
         },
         "concat_rows");
  return Tensor(out);
}

Tensor slice_rows(const Tensor& x, int64_t start, int64_t count) {
  check_2d(x, "slice_rows");
  ICL_CHECK(start >= 0 && count >= 0 && start + count <= x.dim(0),
            "slice_rows: range [" << start << ", " << start + count << ") out of " << x.dim(0));
  int64_t d = x.dim(1);
  auto out = make_node({count, d});
  std::copy(x.value().begin() + size_t(start * d), x.value().begin() + size_t((start + count) * d),
            out->value.begin());
  auto px = x.node();
  finish(out, {px},
         [px, start, count, d](TensorNode& self) {
           px->ensure_grad();
           MapA(px->grad.data() + start * d, count * d) += CMapA(self.grad.data(), count * d);
         },
         "slice_rows");
  return Tensor(out);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  ICL_CHECK(!parts.empty(), "concat_cols: no parts");
  int64_t rows = parts[0].dim(0), total = 0;
  for (const auto& p : parts) {
    check_2d(p, "concat_cols");
    ICL_CHECK(p.dim(0) == rows, "concat_cols: row mismatch");
    total += p.dim(1);
  }
  auto out = make_node({rows, total});
  MapM o(out->value.data(), rows, total);
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::vector<int64_t> offsets;
  int64_t off = 0;
  for (const auto& p : parts) {
    o.middleCols(off, p.dim(1)) = mat(*p.node());
    parents.push_back(p.node());
    offsets.push_back(off);
    off += p.dim(1);
  }
  auto parents_copy = parents;
  finish(out, std::move(parents),
         [parents_copy, offsets, rows, total](TensorNode& self) {
           CMapM g(self.grad.data(), rows, total);
           for (size_t i = 0; i < parents_copy.size(); ++i) {
             auto& p = parents_copy[i];
             if (!p->requires_grad) continue;
             grad_mat(*p) += g.middleCols(offsets[i], p->shape[1]);
           }
         },
         "concat_cols");
  return Tensor(out);
}

Tensor slice_cols(const Tensor& x, int64_t start, int64_t count) {
  check_2d(x, "slice_cols");
  ICL_CHECK(start >= 0 && count >= 0 && start + count <= x.dim(1),
            "slice_cols: range [" << start << ", " << start + count << ") out of " << x.dim(1));
  int64_t rows = x.dim(0);
  auto out = make_node({rows, count});
  MapM(out->value.data(), rows, count) = mat(*x.node()).middleCols(start, count);
  auto px = x.node();
  finish(out, {px},
         [px, start, count](TensorNode& self) {
           grad_mat(*px).middleCols(start, count) +=
               CMapM(self.grad.data(), self.shape[0], count);
         },
         "slice_cols");
  return Tensor(out);
}

Tensor reshape(const Tensor& x, Shape shape) {
  ICL_CHECK(shape_numel(shape) == x.numel(),
            "reshape: " << shape_str(x.shape()) << " -> " << shape_str(shape));
  auto out = make_node(shape);
  out->value = std::vector<real>(x.value().begin(), x.value().end());
  auto px = x.node();
  finish(out, {px},
         [px](TensorNode& self) {
           px->ensure_grad();
           MapA(px->grad.data(), px->numel()) += CMapA(self.grad.data(), self.numel());
         },
         "reshape");
  return Tensor(out);
}

// ---- softmax / layer_norm / gelu -----------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
  int r = int(x.rank());
  if (axis < 0) axis += r;
  ICL_CHECK(axis >= 0 && axis < r, "softmax: axis out of bounds");
  int64_t n = x.dim(size_t(axis));
  int64_t inner = 1, outer = 1;
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(size_t(i));
  for (int i = 0; i < axis; ++i) outer *= x.dim(size_t(i));

  auto out = make_node(x.shape());
  const real* xv = x.value().data();
  real* ov = out->value.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      const real* xs = xv + o * n * inner + i;
      real* os = ov + o * n * inner + i;
      real mx = xs[0];
      for (int64_t j = 1; j < n; ++j) mx = std::max(mx, xs[j * inner]);
      real sum = 0;
      for (int64_t j = 0; j < n; ++j) {
        real e = std::exp(xs[j * inner] - mx);
        os[j * inner] = e;
        sum += e;
      }
      real inv = real(1) / sum;
      for (int64_t j = 0; j < n; ++j) os[j * inner] *= inv;
    }
  }
  auto px = x.node();
  finish(out, {px},
         [px, n, inner, outer](TensorNode& self) {
           px->ensure_grad();
           const real* y = self.value.data();
           const real* g = self.grad.data();
           real* dx = px->grad.data();
           for (int64_t o = 0; o < outer; ++o) {
             for (int64_t i = 0; i < inner; ++i) {
               int64_t base = o * n * inner + i;
               real dot = 0;
               for (int64_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
               for (int64_t j = 0; j < n; ++j) {
                 int64_t k = base + j * inner;
                 dx[k] += y[k] * (g[k] - dot);
               }
             }
           }
         },
         "softmax");
  return Tensor(out);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, real eps) {
  ICL_CHECK(x.rank() >= 1, "layer_norm: rank 0 input");
  ICL_CHECK(eps > 0, "layer_norm: eps must be positive");
  int64_t d = x.dim(x.rank() - 1);
  ICL_CHECK(gain.numel() == d && bias.numel() == d,
            "layer_norm: gain/bias must have " << d << " elements");
  int64_t rows = x.numel() / d;

  auto out = make_node(x.shape());
  std::vector<real> inv_std(size_t(rows), real(0));
  std::vector<real> mean(size_t(rows), real(0));
  const real* xv = x.value().data();
  const real* gv = gain.value().data();
  const real* bv = bias.value().data();
  real* ov = out->value.data();
  for (int64_t rr = 0; rr < rows; ++rr) {
    CMapA row(xv + rr * d, d);
    real mu = row.mean();
    real var = (row - mu).square().mean();
    real inv = real(1) / std::sqrt(var + eps);
    mean[size_t(rr)] = mu;
    inv_std[size_t(rr)] = inv;
    MapA(ov + rr * d, d) =
        ((row - mu) * inv) * CMapA(gv, d) + CMapA(bv, d);
  }
  auto px = x.node(), pg = gain.node(), pb = bias.node();
  finish(out, {px, pg, pb},
         [px, pg, pb, d, rows, mean, inv_std](TensorNode& self) {
           const real* xv = px->value.data();
           const real* gv = pg->value.data();
           const real* g = self.grad.data();
           for (int64_t rr = 0; rr < rows; ++rr) {
             CMapA row(xv + rr * d, d);
             CMapA grow(g + rr * d, d);
             real mu = mean[size_t(rr)];
             real inv = inv_std[size_t(rr)];
             auto xhat = ((row - mu) * inv).eval();
             if (pg->requires_grad) {
               pg->ensure_grad();
               MapA(pg->grad.data(), d) += grow * xhat;
             }
             if (pb->requires_grad) {
               pb->ensure_grad();
               MapA(pb->grad.data(), d) += grow;
             }
             if (px->requires_grad) {
               px->ensure_grad();
               auto dyhat = (grow * CMapA(gv, d)).eval();
               real m1 = dyhat.mean();
               real m2 = (dyhat * xhat).mean();
               MapA(px->grad.data() + rr * d, d) += inv * (dyhat - m1 - xhat * m2);
             }
           }
         },
         "layer_norm");
  return Tensor(out);
}

// GELU tanh-approximation constants: c0 = sqrt(2/pi), c1 = 0.044715.
constexpr real kGeluC0 = real(0.7978845608028654);
constexpr real kGeluC1 = real(0.044715);

Tensor gelu(const Tensor& x) {
  // 0.5 x (1 + tanh(c0 (x + c1 x^3)))
  constexpr real c0 = kGeluC0;
  constexpr real c1 = kGeluC1;
  auto out = make_node(x.shape());
  CMapA xv(x.value().data(), x.numel());
  MapA ov(out->value.data(), out->numel());
  ov = real(0.5) * xv * (real(1) + (c0 * (xv + c1 * xv.cube())).tanh());
  auto px = x.node();
  finish(out, {px},
         [px](TensorNode& self) {
           px->ensure_grad();
           CMapA xv(px->value.data(), px->numel());
           CMapA g(self.grad.data(), self.numel());
           auto t = (kGeluC0 * (xv + kGeluC1 * xv.cube())).tanh().eval();
           auto du = kGeluC0 * (real(1) + real(3) * kGeluC1 * xv.square());
           MapA(px->grad.data(), px->numel()) +=
               g * (real(0.5) * (real(1) + t) + real(0.5) * xv * (real(1) - t.square()) * du);
         },
         "gelu");
  return Tensor(out);
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  check_2d(table, "embedding_lookup");
  int64_t v = table.dim(0), d = table.dim(1);
  for (int id : ids)
    ICL_CHECK(id >= 0 && id < v, "embedding_lookup: id " << id << " out of range [0, " << v << ")");
  auto out = make_node({int64_t(ids.size()), d});
  const real* tv = table.value().data();
  for (size_t i = 0; i < ids.size(); ++i) {
    std::copy(tv + int64_t(ids[i]) * d, tv + (int64_t(ids[i]) + 1) * d,
              out->value.begin() + int64_t(i) * d);
  }
  auto pt = table.node();
  std::vector<int> ids_copy(ids.begin(), ids.end());
  finish(out, {pt},
         [pt, ids_copy, d](TensorNode& self) {
           pt->ensure_grad();
           real* tg = pt->grad.data();
           const real* g = self.grad.data();
           for (size_t i = 0; i < ids_copy.size(); ++i) {
             MapA(tg + int64_t(ids_copy[i]) * d, d) += CMapA(g + int64_t(i) * d, d);
           }
         },
         "embedding_lookup");
  return Tensor(out);
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  check_same_shape(pred, target, "mse_loss");
  ICL_CHECK(pred.numel() > 0, "mse_loss: empty tensors");
  auto out = make_node({1});
  CMapA p(pred.value().data(), pred.numel());
  CMapA t(target.value().data(), target.numel());
  out->value[0] = (p - t).square().mean();
  auto pp = pred.node(), pt = target.node();
  finish(out, {pp, pt},
         [pp, pt](TensorNode& self) {
           real g0 = self.grad[0];
           real c = g0 * real(2) / real(pp->numel());
           CMapA p(pp->value.data(), pp->numel());
           CMapA t(pt->value.data(), pt->numel());
           if (pp->requires_grad) {
             pp->ensure_grad();
             MapA(pp->grad.data(), pp->numel()) += c * (p - t);
           }
           if (pt->requires_grad) {
             pt->ensure_grad();
             MapA(pt->grad.data(), pt->numel()) -= c * (p - t);
           }
         },
         "mse_loss");
  return Tensor(out);
}

// ---- backward ---------------------------------------------------------------

void backward(const Tensor& loss) {
  ICL_CHECK(loss.numel() == 1, "backward: root must be scalar, got " << shape_str(loss.shape()));
  auto root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS; only grad-requiring nodes carry parents.
  std::vector<TensorNode*> order;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  std::unordered_set<TensorNode*> seen;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorNode* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Intermediate grads are reset every pass; leaf grads accumulate across
  // passes until explicitly zeroed.
  for (TensorNode* n : order) {
    if (!n->parents.empty()) {
      n->grad.assign(n->value.size(), real(0));
    } else {
      n->ensure_grad();
    }
  }
  root->ensure_grad();
  root->grad[0] += real(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

// ---- rng constructors ----------------------------------------------------------

Tensor rng_normal(Rng& rng, Shape shape, real stddev, bool requires_grad) {
  auto n = make_node(std::move(shape));
  for (auto& v : n->value) v = real(rng.normal()) * stddev;
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor rng_uniform(Rng& rng, Shape shape, real lo, real hi, bool requires_grad) {
  auto n = make_node(std::move(shape));
  for (auto& v : n->value) v = lo + (hi - lo) * real(rng.uniform());
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor rng_trunc_normal(Rng& rng, Shape shape, real stddev, bool requires_grad) {
  auto n = make_node(std::move(shape));
  for (auto& v : n->value) {
    double z;
    do {
      z = rng.normal();
    } while (std::abs(z) > 2.0);
    v = real(z) * stddev;
  }
  n->requires_grad = requires_grad;
  return Tensor(n);
}

} // namespace icl
