#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sbm/common.hpp"
#include "sbm/random.hpp"

namespace sbm {

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily; persists across backward calls (accumulation contract)
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  std::function<void(TensorNode<T>&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

// Right-aligned (numpy-style) broadcast of two shapes.
inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw DimensionError("broadcast mismatch: " + shape_str(a) + " vs " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `shape` as seen from the broadcast result `out` (0 on expanded dims).
inline std::vector<std::size_t> broadcast_strides(const Shape& shape, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> st(r, 0);
  const auto own = strides_of(shape);
  for (std::size_t i = 0; i < shape.size(); ++i) {
    const std::size_t oi = r - shape.size() + i;
    st[oi] = (shape[i] == 1 && out[oi] != 1) ? 0 : own[i];
  }
  return st;
}

enum class EwOp {
  add,
  sub,
  mul,
  div,
  pow,  // binary
  neg,
  exp,
  log,
  sqrt,
  abs,
  silu,
  sigmoid,
  softplus,
  tanh,
  sin,
  cos,
  expm1_over_x  // phi1(x) = (e^x - 1)/x, phi1(0) = 1
};

template <class T>
class TensorT {
 public:
  using Node = TensorNode<T>;

  TensorT() = default;

  static TensorT zeros(Shape shape) { return full(std::move(shape), T(0)); }

  static TensorT full(Shape shape, T v) {
    TensorT t;
    t.n_ = std::make_shared<Node>();
    t.n_->shape = std::move(shape);
    t.n_->value.assign(numel(t.n_->shape), v);
    return t;
  }

  static TensorT from(Shape shape, std::vector<T> data) {
    if (numel(shape) != data.size())
      throw DimensionError("data size " + std::to_string(data.size()) + " does not match shape " +
                           shape_str(shape));
    TensorT t;
    t.n_ = std::make_shared<Node>();
    t.n_->shape = std::move(shape);
    t.n_->value = std::move(data);
    return t;
  }

  static TensorT scalar(T v) { return full({1}, v); }

  static TensorT randn(Shape shape, RandomStream& rng, T stddev = T(1)) {
    TensorT t = zeros(std::move(shape));
    for (auto& v : t.n_->value) v = static_cast<T>(rng.normal()) * stddev;
    return t;
  }

  static TensorT uniform(Shape shape, RandomStream& rng, T lo, T hi) {
    TensorT t = zeros(std::move(shape));
    for (auto& v : t.n_->value) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  // Custom-op constructor: result with recorded parents and backward rule.
  static TensorT make(Shape shape, std::vector<T> value,
                      std::vector<TensorT> parents,
                      std::function<void(Node&)> backward_fn) {
    TensorT t = from(std::move(shape), std::move(value));
    bool rg = false;
    for (auto& p : parents) {
      t.n_->parents.push_back(p.n_);
      rg = rg || p.requires_grad();
    }
    t.n_->requires_grad = rg;
    if (rg) t.n_->backward_fn = std::move(backward_fn);
    return t;
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  std::size_t size() const { return n_->value.size(); }
  std::size_t dim(std::size_t i) const { return n_->shape[i]; }
  std::size_t rank() const { return n_->shape.size(); }

  const std::vector<T>& value() const { return n_->value; }
  // Leaf mutation only (parameter init / optimizer updates); tensors inside a
  // live graph are never written through this.
  std::vector<T>& mutable_value() { return n_->value; }

  T item() const {
    if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return n_->value[0];
  }

  T at(const std::vector<std::size_t>& idx) const {
    const auto st = strides_of(n_->shape);
    std::size_t off = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) off += idx[i] * st[i];
    return n_->value[off];
  }

  bool requires_grad() const { return n_->requires_grad; }
  TensorT& set_requires_grad(bool rg) {
    n_->requires_grad = rg;
    return *this;
  }

  const std::vector<T>& grad() const {
    n_->ensure_grad();
    return n_->grad;
  }
  std::vector<T>& mutable_grad() {
    n_->ensure_grad();
    return n_->grad;
  }
  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
  }

  std::shared_ptr<Node> node() const { return n_; }

  // Detached copy (constant, no graph history).
  TensorT detach() const { return from(n_->shape, n_->value); }

 private:
  std::shared_ptr<Node> n_;
};

namespace detail {

template <class T>
inline T sigmoid_s(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
inline T softplus_s(T x) {
  if (x > T(30)) return x;
  if (x < T(-30)) return std::exp(x);
  return std::log1p(std::exp(x));
}

template <class T>
inline T phi1_s(T x) {
  if (std::abs(x) < T(1e-5)) return T(1) + x / T(2) + x * x / T(6);
  return std::expm1(x) / x;
}

template <class T>
inline T phi1_grad_s(T x) {
  // d/dx [(e^x-1)/x] = (e^x (x-1) + 1) / x^2
  if (std::abs(x) < T(1e-4)) return T(0.5) + x / T(3) + x * x / T(8);
  return (std::exp(x) * (x - T(1)) + T(1)) / (x * x);
}

template <class T>
constexpr bool strict_domain() {
  return std::is_same_v<T, double>;
}

// Iterate a broadcast output shape, producing flat offsets into two inputs.
struct BroadcastIter {
  Shape out;
  std::vector<std::size_t> sa, sb, idx;
  std::size_t n;
  explicit BroadcastIter(const Shape& a, const Shape& b) {
    out = broadcast_shapes(a, b);
    sa = broadcast_strides(a, out);
    sb = broadcast_strides(b, out);
    idx.assign(out.size(), 0);
    n = numel(out);
  }
};

template <class T, class F>
void for_each_broadcast(const Shape& sha, const Shape& shb, const Shape& out, F&& body) {
  const auto sa = broadcast_strides(sha, out);
  const auto sb = broadcast_strides(shb, out);
  const std::size_t r = out.size();
  std::vector<std::size_t> idx(r, 0);
  const std::size_t n = numel(out);
  std::size_t oa = 0, ob = 0;
  for (std::size_t i = 0; i < n; ++i) {
    body(i, oa, ob);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      idx[d] = 0;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
    }
  }
}

// Reduce a gradient over the broadcast result shape back to the parent shape.
template <class T>
void accumulate_reduced(const std::vector<T>& g, const Shape& gshape, TensorNode<T>& parent) {
  parent.ensure_grad();
  if (parent.shape == gshape) {
    for (std::size_t i = 0; i < g.size(); ++i) parent.grad[i] += g[i];
    return;
  }
  for_each_broadcast<T>(parent.shape, gshape, gshape,
                        [&](std::size_t, std::size_t oa, std::size_t ob) { parent.grad[oa] += g[ob]; });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <class T, class FwdFn, class GradA, class GradB>
TensorT<T> binary_op(const TensorT<T>& a, const TensorT<T>& b, FwdFn f, GradA ga, GradB gb) {
  const Shape out = broadcast_shapes(a.shape(), b.shape());
  std::vector<T> v(numel(out));
  const auto& av = a.value();
  const auto& bv = b.value();
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(av[i], bv[i]);
  } else {
    detail::for_each_broadcast<T>(a.shape(), b.shape(), out,
                                  [&](std::size_t i, std::size_t oa, std::size_t ob) { v[i] = f(av[oa], bv[ob]); });
  }
  auto an = a.node();
  auto bn = b.node();
  return TensorT<T>::make(
      out, std::move(v), {a, b}, [an, bn, out, ga, gb](TensorNode<T>& self) {
        const auto& av = an->value;
        const auto& bv = bn->value;
        const auto& go = self.grad;
        const bool need_a = an->requires_grad, need_b = bn->requires_grad;
        if (an->shape == bn->shape && an->shape == out) {
          if (need_a) {
            an->ensure_grad();
            for (std::size_t i = 0; i < go.size(); ++i) an->grad[i] += ga(av[i], bv[i]) * go[i];
          }
          if (need_b) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < go.size(); ++i) bn->grad[i] += gb(av[i], bv[i]) * go[i];
          }
          return;
        }
        if (need_a) an->ensure_grad();
        if (need_b) bn->ensure_grad();
        detail::for_each_broadcast<T>(an->shape, bn->shape, out,
                                      [&](std::size_t i, std::size_t oa, std::size_t ob) {
                                        if (need_a) an->grad[oa] += ga(av[oa], bv[ob]) * go[i];
                                        if (need_b) bn->grad[ob] += gb(av[oa], bv[ob]) * go[i];
                                      });
      });
}

template <class T, class FwdFn, class GradFn>
TensorT<T> unary_op(const TensorT<T>& a, FwdFn f, GradFn g) {
  std::vector<T> v(a.size());
  const auto& av = a.value();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(av[i]);
  auto an = a.node();
  return TensorT<T>::make(a.shape(), std::move(v), {a}, [an, g](TensorNode<T>& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    const auto& av = an->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += g(av[i]) * self.grad[i];
  });
}

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op(
      a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}
template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op(
      a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}
template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op(
      a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}
template <class T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op(
      a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}
template <class T>
TensorT<T> pow(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op(
      a, b, [](T x, T y) { return std::pow(x, y); },
      [](T x, T y) { return y * std::pow(x, y - T(1)); },
      [](T x, T y) { return std::pow(x, y) * std::log(x); });
}
template <class T>
TensorT<T> pow(const TensorT<T>& a, double e) {
  const T te = static_cast<T>(e);
  return unary_op(
      a, [te](T x) { return std::pow(x, te); }, [te](T x) { return te * std::pow(x, te - T(1)); });
}

template <class T>
TensorT<T> neg(const TensorT<T>& a) {
  return unary_op(
      a, [](T x) { return -x; }, [](T) { return T(-1); });
}
template <class T>
TensorT<T> exp(const TensorT<T>& a) {
  return unary_op(
      a, [](T x) { return std::exp(x); }, [](T x) { return std::exp(x); });
}
template <class T>
TensorT<T> log(const TensorT<T>& a) {
  if constexpr (detail::strict_domain<T>()) {
    for (T x : a.value())
      if (x <= T(0)) throw DomainError("log of non-positive value");
  }
  return unary_op(
      a, [](T x) { return std::log(x); }, [](T x) { return T(1) / x; });
}
template <class T>
TensorT<T> sqrt(const TensorT<T>& a) {
  if constexpr (detail::strict_domain<T>()) {
    for (T x : a.value())
      if (x < T(0)) throw DomainError("sqrt of negative value");
  }
  return unary_op(
      a, [](T x) { return std::sqrt(x); },
      [](T x) { return T(0.5) / std::sqrt(x); });
}
template <class T>
TensorT<T> abs(const TensorT<T>& a) {
  return unary_op(
      a, [](T x) { return std::abs(x); }, [](T x) { return x >= T(0) ? T(1) : T(-1); });
}
template <class T>
TensorT<T> sigmoid(const TensorT<T>& a) {
  return unary_op(
      a, [](T x) { return detail::sigmoid_s(x); },
      [](T x) {
        const T s = detail::sigmoid_s(x);
        return s * (T(1) - s);
      });
}
template <class T>
TensorT<T> silu(const TensorT<T>& a) {
  return unary_op(
      a, [](T x) { return x * detail::sigmoid_s(x); },
      [](T x) {
        const T s = detail::sigmoid_s(x);
        return s * (T(1) + x * (T(1) - s));
      });
}
template <class T>
TensorT<T> softplus(const TensorT<T>& a) {
  return unary_op(
      a, [](T x) { return detail::softplus_s(x); }, [](T x) { return detail::sigmoid_s(x); });
}
template <class T>
TensorT<T> tanh(const TensorT<T>& a) {
  return unary_op(
      a, [](T x) { return std::tanh(x); },
      [](T x) {
        const T t = std::tanh(x);
        return T(1) - t * t;
      });
}
template <class T>
TensorT<T> sin(const TensorT<T>& a) {
  return unary_op(
      a, [](T x) { return std::sin(x); }, [](T x) { return std::cos(x); });
}
template <class T>
TensorT<T> cos(const TensorT<T>& a) {
  return unary_op(
      a, [](T x) { return std::cos(x); }, [](T x) { return -std::sin(x); });
}
template <class T>
TensorT<T> expm1_over_x(const TensorT<T>& a) {
  return unary_op(
      a, [](T x) { return detail::phi1_s(x); }, [](T x) { return detail::phi1_grad_s(x); });
}

template <class T>
TensorT<T> elementwise(EwOp op, const TensorT<T>& a) {
  switch (op) {
    case EwOp::neg: return neg(a);
    case EwOp::exp: return exp(a);
    case EwOp::log: return log(a);
    case EwOp::sqrt: return sqrt(a);
    case EwOp::abs: return abs(a);
    case EwOp::silu: return silu(a);
    case EwOp::sigmoid: return sigmoid(a);
    case EwOp::softplus: return softplus(a);
    case EwOp::tanh: return tanh(a);
    case EwOp::sin: return sin(a);
    case EwOp::cos: return cos(a);
    case EwOp::expm1_over_x: return expm1_over_x(a);
    default: throw ContractError("elementwise: op requires two operands");
  }
}

template <class T>
TensorT<T> elementwise(EwOp op, const TensorT<T>& a, const TensorT<T>& b) {
  switch (op) {
    case EwOp::add: return add(a, b);
    case EwOp::sub: return sub(a, b);
    case EwOp::mul: return mul(a, b);
    case EwOp::div: return div(a, b);
    case EwOp::pow: return pow(a, b);
    default: throw ContractError("elementwise: op takes one operand");
  }
}

template <class T>
TensorT<T> operator+(const TensorT<T>& a, const TensorT<T>& b) { return add(a, b); }
template <class T>
TensorT<T> operator-(const TensorT<T>& a, const TensorT<T>& b) { return sub(a, b); }
template <class T>
TensorT<T> operator*(const TensorT<T>& a, const TensorT<T>& b) { return mul(a, b); }
template <class T>
TensorT<T> operator/(const TensorT<T>& a, const TensorT<T>& b) { return div(a, b); }
template <class T>
TensorT<T> operator-(const TensorT<T>& a) { return neg(a); }
template <class T>
TensorT<T> operator*(const TensorT<T>& a, double s) { return mul(a, TensorT<T>::scalar(static_cast<T>(s))); }
template <class T>
TensorT<T> operator*(double s, const TensorT<T>& a) { return a * s; }
template <class T>
TensorT<T> operator+(const TensorT<T>& a, double s) { return add(a, TensorT<T>::scalar(static_cast<T>(s))); }
template <class T>
TensorT<T> operator-(const TensorT<T>& a, double s) { return sub(a, TensorT<T>::scalar(static_cast<T>(s))); }

// ---------------------------------------------------------------------------
// Matmul (batched, broadcast leading dims), Eigen-backed GEMM
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  using MMap = Eigen::Map<Mat>;
  if (a.rank() < 2 || b.rank() < 2) throw DimensionError("matmul requires rank >= 2");
  const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t k2 = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  if (k != k2)
    throw DimensionError("matmul inner dims differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  Shape ab(a.shape().begin(), a.shape().end() - 2);
  Shape bb(b.shape().begin(), b.shape().end() - 2);
  const Shape batch = broadcast_shapes(ab, bb);
  Shape out = batch;
  out.push_back(m);
  out.push_back(n);
  const std::size_t nb = numel(batch);
  std::vector<T> v(nb * m * n);

  // Flat batch offsets honoring broadcast.
  std::vector<std::size_t> offa(nb), offb(nb);
  {
    const auto sa = broadcast_strides(ab, batch);
    const auto sb = broadcast_strides(bb, batch);
    std::vector<std::size_t> idx(batch.size(), 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t i = 0; i < nb; ++i) {
      offa[i] = oa;
      offb[i] = ob;
      for (std::size_t d = batch.size(); d-- > 0;) {
        ++idx[d];
        oa += sa[d];
        ob += sb[d];
        if (idx[d] < batch[d]) break;
        idx[d] = 0;
        oa -= sa[d] * batch[d];
        ob -= sb[d] * batch[d];
      }
    }
  }
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < nb; ++i) {
    CMap A(av.data() + offa[i] * m * k, m, k);
    CMap B(bv.data() + offb[i] * k * n, k, n);
    MMap C(v.data() + i * m * n, m, n);
    C.noalias() = A * B;
  }
  auto an = a.node();
  auto bn = b.node();
  return TensorT<T>::make(
      out, std::move(v), {a, b}, [an, bn, m, k, n, nb, offa, offb](TensorNode<T>& self) {
        const auto& go = self.grad;
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < nb; ++i) {
            CMap G(go.data() + i * m * n, m, n);
            CMap B(bn->value.data() + offb[i] * k * n, k, n);
            MMap GA(an->grad.data() + offa[i] * m * k, m, k);
            GA.noalias() += G * B.transpose();
          }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < nb; ++i) {
            CMap G(go.data() + i * m * n, m, n);
            CMap A(an->value.data() + offa[i] * m * k, m, k);
            MMap GB(bn->grad.data() + offb[i] * k * n, k, n);
            GB.noalias() += A.transpose() * G;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

enum class ReduceOp { sum, mean, max };

template <class T>
TensorT<T> reduce(ReduceOp op, const TensorT<T>& a, std::vector<std::size_t> axes,
                  bool keepdims = false) {
  const std::size_t r = a.rank();
  for (auto ax : axes)
    if (ax >= r) throw DimensionError("reduce axis out of range");
  if (axes.empty()) {
    // No-op by contract: returns an input copy.
    auto an = a.node();
    return TensorT<T>::make(a.shape(), a.value(), {a}, [an](TensorNode<T>& self) {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    });
  }
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  std::vector<bool> reduced(r, false);
  for (auto ax : axes) reduced[ax] = true;
  Shape out;
  std::size_t count = 1;
  for (std::size_t i = 0; i < r; ++i) {
    if (reduced[i]) {
      count *= a.dim(i);
      if (keepdims) out.push_back(1);
    } else {
      out.push_back(a.dim(i));
    }
  }
  if (out.empty()) out.push_back(1);

  // Map each input flat index to an output flat index.
  const auto in_st = strides_of(a.shape());
  Shape kept = a.shape();
  for (std::size_t i = 0; i < r; ++i)
    if (reduced[i]) kept[i] = 1;
  const auto out_st = broadcast_strides(kept, a.shape());  // stride 0 on reduced dims
  // out_st indexes into the kept-shape layout which matches `out` element order.

  const std::size_t n = a.size();
  const auto& av = a.value();
  const std::size_t on = numel(out);
  std::vector<T> v(on, op == ReduceOp::max ? -std::numeric_limits<T>::infinity() : T(0));
  std::vector<std::size_t> argmax;
  if (op == ReduceOp::max) argmax.assign(on, 0);

  std::vector<std::size_t> idx(r, 0);
  std::size_t oo = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (op == ReduceOp::max) {
      if (av[i] > v[oo]) {
        v[oo] = av[i];
        argmax[oo] = i;  // first maximal element wins (strict >, ascending scan)
      }
    } else {
      v[oo] += av[i];
    }
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      oo += out_st[d];
      if (idx[d] < a.dim(d)) break;
      idx[d] = 0;
      oo -= out_st[d] * a.dim(d);
    }
  }
  if (op == ReduceOp::mean)
    for (auto& x : v) x /= static_cast<T>(count);

  auto an = a.node();
  const Shape ashape = a.shape();
  return TensorT<T>::make(
      out, std::move(v), {a},
      [an, op, count, out_st, ashape, argmax](TensorNode<T>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        if (op == ReduceOp::max) {
          for (std::size_t o = 0; o < self.grad.size(); ++o) an->grad[argmax[o]] += self.grad[o];
          return;
        }
        const T scale = op == ReduceOp::mean ? T(1) / static_cast<T>(count) : T(1);
        const std::size_t r = ashape.size();
        std::vector<std::size_t> idx(r, 0);
        std::size_t oo = 0;
        const std::size_t n = an->value.size();
        for (std::size_t i = 0; i < n; ++i) {
          an->grad[i] += self.grad[oo] * scale;
          for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            oo += out_st[d];
            if (idx[d] < ashape[d]) break;
            idx[d] = 0;
            oo -= out_st[d] * ashape[d];
          }
        }
      });
}

template <class T>
TensorT<T> sum(const TensorT<T>& a, std::vector<std::size_t> axes, bool keepdims = false) {
  return reduce(ReduceOp::sum, a, std::move(axes), keepdims);
}
template <class T>
TensorT<T> sum_all(const TensorT<T>& a) {
  std::vector<std::size_t> axes(a.rank());
  std::iota(axes.begin(), axes.end(), 0);
  return reduce(ReduceOp::sum, a, axes);
}
template <class T>
TensorT<T> mean(const TensorT<T>& a, std::vector<std::size_t> axes, bool keepdims = false) {
  return reduce(ReduceOp::mean, a, std::move(axes), keepdims);
}
template <class T>
TensorT<T> mean_all(const TensorT<T>& a) {
  std::vector<std::size_t> axes(a.rank());
  std::iota(axes.begin(), axes.end(), 0);
  return reduce(ReduceOp::mean, a, axes);
}
template <class T>
TensorT<T> max(const TensorT<T>& a, std::vector<std::size_t> axes, bool keepdims = false) {
  return reduce(ReduceOp::max, a, std::move(axes), keepdims);
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> reshape(const TensorT<T>& a, Shape shape) {
  if (numel(shape) != a.size())
    throw DimensionError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  auto an = a.node();
  return TensorT<T>::make(std::move(shape), a.value(), {a}, [an](TensorNode<T>& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  });
}

template <class T>
TensorT<T> transpose(const TensorT<T>& a, const std::vector<std::size_t>& perm) {
  const std::size_t r = a.rank();
  if (perm.size() != r) throw DimensionError("transpose perm rank mismatch");
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) out[i] = a.dim(perm[i]);
  const auto in_st = strides_of(a.shape());
  std::vector<std::size_t> src_st(r);
  for (std::size_t i = 0; i < r; ++i) src_st[i] = in_st[perm[i]];

  const std::size_t n = a.size();
  std::vector<T> v(n);
  const auto& av = a.value();
  std::vector<std::size_t> idx(r, 0);
  std::size_t so = 0;
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = av[so];
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      so += src_st[d];
      if (idx[d] < out[d]) break;
      idx[d] = 0;
      so -= src_st[d] * out[d];
    }
  }
  auto an = a.node();
  return TensorT<T>::make(out, std::move(v), {a}, [an, out, src_st, r](TensorNode<T>& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    std::vector<std::size_t> idx(r, 0);
    std::size_t so = 0;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      an->grad[so] += self.grad[i];
      for (std::size_t d = r; d-- > 0;) {
        ++idx[d];
        so += src_st[d];
        if (idx[d] < out[d]) break;
        idx[d] = 0;
        so -= src_st[d] * out[d];
      }
    }
  });
}

// Remap one axis through an index table: out[..., j, ...] = in[..., map[j], ...].
// Backward scatter-adds, which makes reflect padding and slicing share one rule.
template <class T>
TensorT<T> axis_remap(const TensorT<T>& a, std::size_t axis, const std::vector<std::size_t>& map) {
  const std::size_t r = a.rank();
  if (axis >= r) throw DimensionError("axis_remap axis out of range");
  Shape out = a.shape();
  out[axis] = map.size();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < r; ++i) inner *= a.dim(i);
  const std::size_t da = a.dim(axis), dm = map.size();
  std::vector<T> v(outer * dm * inner);
  const auto& av = a.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < dm; ++j) {
      const T* src = av.data() + (o * da + map[j]) * inner;
      T* dst = v.data() + (o * dm + j) * inner;
      std::copy(src, src + inner, dst);
    }
  auto an = a.node();
  return TensorT<T>::make(out, std::move(v), {a},
                          [an, map, outer, inner, da, dm](TensorNode<T>& self) {
                            if (!an->requires_grad) return;
                            an->ensure_grad();
                            for (std::size_t o = 0; o < outer; ++o)
                              for (std::size_t j = 0; j < dm; ++j) {
                                const T* g = self.grad.data() + (o * dm + j) * inner;
                                T* dst = an->grad.data() + (o * da + map[j]) * inner;
                                for (std::size_t i = 0; i < inner; ++i) dst[i] += g[i];
                              }
                          });
}

template <class T>
TensorT<T> slice(const TensorT<T>& a, std::size_t axis, std::size_t start, std::size_t len) {
  if (axis >= a.rank() || start + len > a.dim(axis)) throw DimensionError("slice out of range");
  std::vector<std::size_t> map(len);
  std::iota(map.begin(), map.end(), start);
  return axis_remap(a, axis, map);
}

template <class T>
TensorT<T> flip(const TensorT<T>& a, std::size_t axis) {
  const std::size_t d = a.dim(axis);
  std::vector<std::size_t> map(d);
  for (std::size_t i = 0; i < d; ++i) map[i] = d - 1 - i;
  return axis_remap(a, axis, map);
}

template <class T>
TensorT<T> pad_reflect(const TensorT<T>& a, std::size_t axis, std::size_t before,
                       std::size_t after) {
  const std::size_t d = a.dim(axis);
  if (d < 2 && (before || after)) throw DimensionError("pad_reflect needs dim >= 2");
  if (before >= d || after >= d) throw DimensionError("pad_reflect amount exceeds dim-1");
  std::vector<std::size_t> map(before + d + after);
  for (std::size_t i = 0; i < before; ++i) map[i] = before - i;
  for (std::size_t i = 0; i < d; ++i) map[before + i] = i;
  for (std::size_t i = 0; i < after; ++i) map[before + d + i] = d - 2 - i;
  return axis_remap(a, axis, map);
}

// ---------------------------------------------------------------------------
// layer_norm (composite: gradient comes from the primitives)
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> layer_norm(const TensorT<T>& a, std::size_t axis, double eps, const TensorT<T>& gain,
                      const TensorT<T>& bias) {
  if (eps <= 0) throw DomainError("layer_norm eps must be positive");
  auto mu = mean(a, {axis}, true);
  auto xc = a - mu;
  auto var = mean(xc * xc, {axis}, true);
  auto y = xc / sqrt(var + eps);
  return y * gain + bias;
}

template <class T>
TensorT<T> layer_norm(const TensorT<T>& a, std::size_t axis, double eps = 1e-5) {
  auto one = TensorT<T>::scalar(T(1));
  auto zero = TensorT<T>::scalar(T(0));
  return layer_norm(a, axis, eps, one, zero);
}

// ---------------------------------------------------------------------------
// Depthwise causal 1-D convolution over [lanes, L, C], weight [C, K], bias [C].
// Left zero padding of K-1 samples.
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> conv1d_depthwise_causal(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
  if (x.rank() != 3 || w.rank() != 2) throw DimensionError("conv1d_depthwise_causal shapes");
  const std::size_t lanes = x.dim(0), L = x.dim(1), C = x.dim(2), K = w.dim(1);
  if (w.dim(0) != C || b.size() != C) throw DimensionError("conv1d weight/bias channel mismatch");
  std::vector<T> v(x.size());
  const auto& xv = x.value();
  const auto& wv = w.value();
  const auto& bv = b.value();
  for (std::size_t l = 0; l < lanes; ++l)
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t c = 0; c < C; ++c) {
        T acc = bv[c];
        const std::size_t kmin = K - 1 > t ? K - 1 - t : 0;
        for (std::size_t k = kmin; k < K; ++k)
          acc += wv[c * K + k] * xv[(l * L + (t + k - (K - 1))) * C + c];
        v[(l * L + t) * C + c] = acc;
      }
  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  return TensorT<T>::make(
      x.shape(), std::move(v), {x, w, b}, [xn, wn, bn, lanes, L, C, K](TensorNode<T>& self) {
        const auto& go = self.grad;
        const auto& xv = xn->value;
        const auto& wv = wn->value;
        if (xn->requires_grad) xn->ensure_grad();
        if (wn->requires_grad) wn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        for (std::size_t l = 0; l < lanes; ++l)
          for (std::size_t t = 0; t < L; ++t)
            for (std::size_t c = 0; c < C; ++c) {
              const T g = go[(l * L + t) * C + c];
              if (bn->requires_grad) bn->grad[c] += g;
              const std::size_t kmin = K - 1 > t ? K - 1 - t : 0;
              for (std::size_t k = kmin; k < K; ++k) {
                const std::size_t xi = (l * L + (t + k - (K - 1))) * C + c;
                if (wn->requires_grad) wn->grad[c * K + k] += g * xv[xi];
                if (xn->requires_grad) xn->grad[xi] += g * wv[c * K + k];
              }
            }
      });
}

// ---------------------------------------------------------------------------
// backward & gradient checking
// ---------------------------------------------------------------------------

template <class T>
void backward(const TensorT<T>& loss) {
  if (loss.size() != 1) throw ContractError("backward: loss must be scalar");
  auto root = loss.node();
  // Iterative post-order topological sort; each node visited exactly once.
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> visited;
  std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* p = node->parents[next].get();
      ++next;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

struct GradCheckEntry {
  std::size_t param_index = 0;
  double max_rel_err = 0.0;
  bool ok = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool ok = true;
};

// Central-difference check of d f / d params against the analytic backward.
// Relative error uses max(|analytic|, |numeric|, 1) in the denominator so
// near-zero gradients are compared absolutely.
template <class T>
GradCheckReport check_gradients(const std::function<TensorT<T>(const std::vector<TensorT<T>>&)>& f,
                                std::vector<TensorT<T>>& params, double tol,
                                double perturbation = 1e-5) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  auto loss = f(params);
  backward(loss);
  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.grad());

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    GradCheckEntry e;
    e.param_index = pi;
    auto& vals = params[pi].mutable_value();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const T orig = vals[i];
      vals[i] = orig + static_cast<T>(perturbation);
      const double fp = static_cast<double>(f(params).item());
      vals[i] = orig - static_cast<T>(perturbation);
      const double fm = static_cast<double>(f(params).item());
      vals[i] = orig;
      const double num = (fp - fm) / (2.0 * perturbation);
      const double ana = static_cast<double>(analytic[pi][i]);
      const double denom = std::max({std::abs(num), std::abs(ana), 1.0});
      e.max_rel_err = std::max(e.max_rel_err, std::abs(num - ana) / denom);
    }
    e.ok = e.max_rel_err < tol;
    report.entries.push_back(e);
    report.max_rel_err = std::max(report.max_rel_err, e.max_rel_err);
    report.ok = report.ok && e.ok;
  }
  return report;
}

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

}  // namespace sbm
