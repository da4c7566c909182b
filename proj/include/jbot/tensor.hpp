#pragma once

// Reverse-mode autodiff over dense Eigen matrices, templated on scalar so the
// same graph code runs in float for training and in double for the
// finite-difference suites. A Tensor is a shared handle to a graph node; ops
// record a node with a backward closure only when some input requires
// gradients and grad mode is on.

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace jbot {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

inline std::string shape_str(long r, long c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace detail

/// RAII guard disabling graph recording (teacher forwards, evaluation).
struct NoGrad {
  bool prev;
  NoGrad() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGrad() { detail::grad_mode() = prev; }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;
};

template <typename S>
struct TensorNode {
  Mat<S> value;
  Mat<S> grad;  // sized lazily during backward; kept only on leaves afterwards
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;

  bool leaf() const { return parents.empty(); }
  void accumulate(const Mat<S>& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) grad = Mat<S>::Zero(value.rows(), value.cols());
    grad += g;
  }
};

template <typename S>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Mat<S> v, bool requires_grad = false)
      : n_(std::make_shared<TensorNode<S>>()) {
    n_->value = std::move(v);
    n_->requires_grad = requires_grad;
  }

  static Tensor scalar(S v, bool requires_grad = false) {
    Mat<S> m(1, 1);
    m(0, 0) = v;
    return Tensor(std::move(m), requires_grad);
  }

  bool defined() const { return n_ != nullptr; }
  const Mat<S>& value() const { return n_->value; }
  /// Direct value access for leaves (optimizer updates, EMA). The graph is
  /// rebuilt every step, so mutating leaf values between steps is safe.
  Mat<S>& mutable_value() { return n_->value; }

  long rows() const { return n_->value.rows(); }
  long cols() const { return n_->value.cols(); }
  bool requires_grad() const { return n_->requires_grad; }
  bool has_grad() const { return n_->grad.size() != 0; }
  const Mat<S>& grad() const {
    if (!has_grad()) throw GraphError("Tensor::grad: no gradient present");
    return n_->grad;
  }
  void clear_grad() { n_->grad.resize(0, 0); }

  std::shared_ptr<TensorNode<S>> node() const { return n_; }

 private:
  std::shared_ptr<TensorNode<S>> n_;
};

namespace detail {

template <typename S, typename F>
Tensor<S> make_node(Mat<S> value, std::vector<Tensor<S>> parents, F&& fn) {
  Tensor<S> out(std::move(value), false);
  bool track = grad_mode();
  bool any = false;
  if (track) {
    for (const auto& p : parents)
      if (p.requires_grad()) any = true;
  }
  if (track && any) {
    auto n = out.node();
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backprop = std::forward<F>(fn);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// primitives
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: incompatible shapes " + detail::shape_str(a.rows(), a.cols()) +
                     " and " + detail::shape_str(b.rows(), b.cols()));
  Mat<S> y = a.value() * b.value();
  auto an = a.node();
  auto bn = b.node();
  return detail::make_node<S>(std::move(y), {a, b}, [an, bn](TensorNode<S>& self) {
    if (an->requires_grad) an->accumulate(self.grad * bn->value.transpose());
    if (bn->requires_grad) bn->accumulate(an->value.transpose() * self.grad);
  });
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("add: incompatible shapes " + detail::shape_str(a.rows(), a.cols()) +
                     " and " + detail::shape_str(b.rows(), b.cols()));
  Mat<S> y = a.value() + b.value();
  auto an = a.node();
  auto bn = b.node();
  return detail::make_node<S>(std::move(y), {a, b}, [an, bn](TensorNode<S>& self) {
    an->accumulate(self.grad);
    bn->accumulate(self.grad);
  });
}

/// Adds a 1 x c row vector to every row of a (leading-batch broadcast).
template <typename S>
Tensor<S> add_rowvec(const Tensor<S>& a, const Tensor<S>& b) {
  if (b.rows() != 1 || a.cols() != b.cols())
    throw ShapeError("add_rowvec: incompatible shapes " + detail::shape_str(a.rows(), a.cols()) +
                     " and " + detail::shape_str(b.rows(), b.cols()));
  Mat<S> y = a.value().rowwise() + b.value().row(0);
  auto an = a.node();
  auto bn = b.node();
  return detail::make_node<S>(std::move(y), {a, b}, [an, bn](TensorNode<S>& self) {
    an->accumulate(self.grad);
    if (bn->requires_grad) bn->accumulate(self.grad.colwise().sum());
  });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("sub: incompatible shapes " + detail::shape_str(a.rows(), a.cols()) +
                     " and " + detail::shape_str(b.rows(), b.cols()));
  Mat<S> y = a.value() - b.value();
  auto an = a.node();
  auto bn = b.node();
  return detail::make_node<S>(std::move(y), {a, b}, [an, bn](TensorNode<S>& self) {
    an->accumulate(self.grad);
    if (bn->requires_grad) bn->accumulate(-self.grad);
  });
}

/// Elementwise product.
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("mul: incompatible shapes " + detail::shape_str(a.rows(), a.cols()) +
                     " and " + detail::shape_str(b.rows(), b.cols()));
  Mat<S> y = a.value().cwiseProduct(b.value());
  auto an = a.node();
  auto bn = b.node();
  return detail::make_node<S>(std::move(y), {a, b}, [an, bn](TensorNode<S>& self) {
    if (an->requires_grad) an->accumulate(self.grad.cwiseProduct(bn->value));
    if (bn->requires_grad) bn->accumulate(self.grad.cwiseProduct(an->value));
  });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S s) {
  Mat<S> y = a.value() * s;
  auto an = a.node();
  return detail::make_node<S>(std::move(y), {a}, [an, s](TensorNode<S>& self) {
    an->accumulate(self.grad * s);
  });
}

template <typename S>
Tensor<S> add_const(const Tensor<S>& a, S s) {
  Mat<S> y = (a.value().array() + s).matrix();
  auto an = a.node();
  return detail::make_node<S>(std::move(y), {a},
                              [an](TensorNode<S>& self) { an->accumulate(self.grad); });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
  Mat<S> y = a.value().transpose();
  auto an = a.node();
  return detail::make_node<S>(std::move(y), {a}, [an](TensorNode<S>& self) {
    an->accumulate(self.grad.transpose());
  });
}

/// Row-major reflow to (r, c); element count must match.
template <typename S>
Tensor<S> reshape(const Tensor<S>& a, long r, long c) {
  if (r * c != a.rows() * a.cols())
    throw ShapeError("reshape: cannot reshape " + detail::shape_str(a.rows(), a.cols()) + " to " +
                     detail::shape_str(r, c));
  Mat<S> y = Eigen::Map<const Mat<S>>(a.value().data(), r, c);
  auto an = a.node();
  return detail::make_node<S>(std::move(y), {a}, [an](TensorNode<S>& self) {
    an->accumulate(Eigen::Map<const Mat<S>>(self.grad.data(), an->value.rows(), an->value.cols()));
  });
}

template <typename S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: empty input");
  long c = parts[0].cols();
  long r = 0;
  for (const auto& p : parts) {
    if (p.cols() != c)
      throw ShapeError("concat_rows: incompatible shapes " + detail::shape_str(parts[0].rows(), c) +
                       " and " + detail::shape_str(p.rows(), p.cols()));
    r += p.rows();
  }
  Mat<S> y(r, c);
  long at = 0;
  for (const auto& p : parts) {
    y.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<std::shared_ptr<TensorNode<S>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return detail::make_node<S>(std::move(y), parts, [nodes](TensorNode<S>& self) {
    long at = 0;
    for (const auto& n : nodes) {
      n->accumulate(self.grad.middleRows(at, n->value.rows()));
      at += n->value.rows();
    }
  });
}

template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: empty input");
  long r = parts[0].rows();
  long c = 0;
  for (const auto& p : parts) {
    if (p.rows() != r)
      throw ShapeError("concat_cols: incompatible shapes " + detail::shape_str(r, parts[0].cols()) +
                       " and " + detail::shape_str(p.rows(), p.cols()));
    c += p.cols();
  }
  Mat<S> y(r, c);
  long at = 0;
  for (const auto& p : parts) {
    y.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<std::shared_ptr<TensorNode<S>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return detail::make_node<S>(std::move(y), parts, [nodes](TensorNode<S>& self) {
    long at = 0;
    for (const auto& n : nodes) {
      n->accumulate(self.grad.middleCols(at, n->value.cols()));
      at += n->value.cols();
    }
  });
}

template <typename S>
Tensor<S> slice_rows(const Tensor<S>& a, long r0, long n) {
  if (r0 < 0 || n < 0 || r0 + n > a.rows())
    throw ShapeError("slice_rows: range [" + std::to_string(r0) + ", " + std::to_string(r0 + n) +
                     ") out of bounds for " + detail::shape_str(a.rows(), a.cols()));
  Mat<S> y = a.value().middleRows(r0, n);
  auto an = a.node();
  return detail::make_node<S>(std::move(y), {a}, [an, r0, n](TensorNode<S>& self) {
    if (!an->requires_grad) return;
    Mat<S> g = Mat<S>::Zero(an->value.rows(), an->value.cols());
    g.middleRows(r0, n) = self.grad;
    an->accumulate(g);
  });
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& a, long c0, long n) {
  if (c0 < 0 || n < 0 || c0 + n > a.cols())
    throw ShapeError("slice_cols: range [" + std::to_string(c0) + ", " + std::to_string(c0 + n) +
                     ") out of bounds for " + detail::shape_str(a.rows(), a.cols()));
  Mat<S> y = a.value().middleCols(c0, n);
  auto an = a.node();
  return detail::make_node<S>(std::move(y), {a}, [an, c0, n](TensorNode<S>& self) {
    if (!an->requires_grad) return;
    Mat<S> g = Mat<S>::Zero(an->value.rows(), an->value.cols());
    g.middleCols(c0, n) = self.grad;
    an->accumulate(g);
  });
}

/// Gathers rows by index; duplicate indices accumulate gradients.
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& a, std::vector<long> idx) {
  for (long i : idx)
    if (i < 0 || i >= a.rows())
      throw ShapeError("gather_rows: index " + std::to_string(i) + " out of bounds for " +
                       detail::shape_str(a.rows(), a.cols()));
  Mat<S> y(static_cast<long>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) y.row(static_cast<long>(i)) = a.value().row(idx[i]);
  auto an = a.node();
  return detail::make_node<S>(std::move(y), {a}, [an, idx](TensorNode<S>& self) {
    if (!an->requires_grad) return;
    Mat<S> g = Mat<S>::Zero(an->value.rows(), an->value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<long>(i));
    an->accumulate(g);
  });
}

/// Rowwise temperature softmax: softmax(x / temperature) per row.
template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& a, S temperature) {
  if (temperature <= S(0)) throw ShapeError("softmax_rows: temperature must be positive");
  Mat<S> y(a.rows(), a.cols());
  for (long r = 0; r < a.rows(); ++r) {
    Eigen::Array<S, 1, Eigen::Dynamic> x = a.value().row(r).array() / temperature;
    S m = x.maxCoeff();
    Eigen::Array<S, 1, Eigen::Dynamic> e = (x - m).exp();
    y.row(r) = (e / e.sum()).matrix();
  }
  auto an = a.node();
  Mat<S> yv = y;
  return detail::make_node<S>(std::move(y), {a}, [an, yv, temperature](TensorNode<S>& self) {
    Mat<S> gy = self.grad.cwiseProduct(yv);
    Mat<S> g(yv.rows(), yv.cols());
    for (long r = 0; r < yv.rows(); ++r) {
      S rd = gy.row(r).sum();
      g.row(r) = (gy.row(r) - yv.row(r) * rd) / temperature;
    }
    an->accumulate(g);
  });
}

/// log(max(x, floor)); gradient is zero on clamped entries.
template <typename S>
Tensor<S> log_clamped(const Tensor<S>& a, S floor) {
  Mat<S> y = a.value().array().max(floor).log().matrix();
  auto an = a.node();
  Mat<S> av = a.value();
  return detail::make_node<S>(std::move(y), {a}, [an, av, floor](TensorNode<S>& self) {
    Mat<S> g =
        ((av.array() > floor).template cast<S>() * self.grad.array() / av.array().max(floor))
            .matrix();
    an->accumulate(g);
  });
}

template <typename S>
Tensor<S> exp(const Tensor<S>& a) {
  Mat<S> y = a.value().array().exp().matrix();
  auto an = a.node();
  Mat<S> yv = y;
  return detail::make_node<S>(std::move(y), {a}, [an, yv](TensorNode<S>& self) {
    an->accumulate(self.grad.cwiseProduct(yv));
  });
}

/// Rowwise layer norm with affine parameters gamma, beta (1 x c).
template <typename S>
Tensor<S> layer_norm_rows(const Tensor<S>& a, const Tensor<S>& gamma, const Tensor<S>& beta,
                          S eps = S(1e-5)) {
  if (gamma.rows() != 1 || gamma.cols() != a.cols() || beta.rows() != 1 || beta.cols() != a.cols())
    throw ShapeError("layer_norm_rows: affine params must be 1x" + std::to_string(a.cols()) +
                     ", got " + detail::shape_str(gamma.rows(), gamma.cols()) + " and " +
                     detail::shape_str(beta.rows(), beta.cols()));
  long c = a.cols();
  Mat<S> xhat(a.rows(), c);
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std(a.rows());
  for (long r = 0; r < a.rows(); ++r) {
    const auto x = a.value().row(r).array();
    S mu = x.mean();
    S var = (x - mu).square().mean();
    S is = S(1) / std::sqrt(var + eps);
    inv_std(r) = is;
    xhat.row(r) = ((x - mu) * is).matrix();
  }
  Mat<S> y = ((xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
              beta.value().row(0).array())
                 .matrix();
  auto an = a.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  return detail::make_node<S>(
      std::move(y), {a, gamma, beta}, [an, gn, bn, xhat, inv_std](TensorNode<S>& self) {
        long c = xhat.cols();
        if (gn->requires_grad) gn->accumulate(self.grad.cwiseProduct(xhat).colwise().sum());
        if (bn->requires_grad) bn->accumulate(self.grad.colwise().sum());
        if (!an->requires_grad) return;
        Mat<S> dxhat = (self.grad.array().rowwise() * gn->value.row(0).array()).matrix();
        Mat<S> g(xhat.rows(), c);
        for (long r = 0; r < xhat.rows(); ++r) {
          const auto dxh = dxhat.row(r).array();
          const auto xh = xhat.row(r).array();
          S m1 = dxh.mean();
          S m2 = (dxh * xh).mean();
          g.row(r) = (inv_std(r) * (dxh - m1 - xh * m2)).matrix();
        }
        an->accumulate(g);
      });
}

/// Exact GELU: x * Phi(x) with the Gaussian CDF.
template <typename S>
Tensor<S> gelu(const Tensor<S>& a) {
  constexpr S inv_sqrt2 = S(0.7071067811865475244);
  constexpr S inv_sqrt2pi = S(0.3989422804014326779);
  auto cdf = [](S x) { return S(0.5) * (S(1) + std::erf(x * inv_sqrt2)); };
  Mat<S> y = a.value().unaryExpr([&](S x) { return x * cdf(x); });
  auto an = a.node();
  Mat<S> av = a.value();
  return detail::make_node<S>(std::move(y), {a}, [an, av, cdf](TensorNode<S>& self) {
    Mat<S> slope =
        av.unaryExpr([&](S x) { return cdf(x) + x * inv_sqrt2pi * std::exp(S(-0.5) * x * x); });
    an->accumulate(self.grad.cwiseProduct(slope));
  });
}

/// out = keep ? x : fill; gradient passes only through kept entries.
template <typename S>
Tensor<S> masked_fill(const Tensor<S>& a, const Mat<S>& keep, S fill) {
  if (keep.rows() != a.rows() || keep.cols() != a.cols())
    throw ShapeError("masked_fill: incompatible shapes " + detail::shape_str(a.rows(), a.cols()) +
                     " and " + detail::shape_str(keep.rows(), keep.cols()));
  Mat<S> y = (keep.array() * a.value().array() + (S(1) - keep.array()) * fill).matrix();
  auto an = a.node();
  Mat<S> k = keep;
  return detail::make_node<S>(std::move(y), {a}, [an, k](TensorNode<S>& self) {
    an->accumulate(self.grad.cwiseProduct(k));
  });
}

/// Elementwise product with a precomputed (already 1/(1-p) scaled) mask.
template <typename S>
Tensor<S> apply_dropout(const Tensor<S>& a, const Mat<S>& mask) {
  if (mask.rows() != a.rows() || mask.cols() != a.cols())
    throw ShapeError("apply_dropout: incompatible shapes " + detail::shape_str(a.rows(), a.cols()) +
                     " and " + detail::shape_str(mask.rows(), mask.cols()));
  Mat<S> y = a.value().cwiseProduct(mask);
  auto an = a.node();
  Mat<S> m = mask;
  return detail::make_node<S>(std::move(y), {a}, [an, m](TensorNode<S>& self) {
    an->accumulate(self.grad.cwiseProduct(m));
  });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
  Mat<S> y(1, 1);
  y(0, 0) = a.value().sum();
  auto an = a.node();
  return detail::make_node<S>(std::move(y), {a}, [an](TensorNode<S>& self) {
    an->accumulate(Mat<S>::Constant(an->value.rows(), an->value.cols(), self.grad(0, 0)));
  });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
  S n = static_cast<S>(a.rows() * a.cols());
  Mat<S> y(1, 1);
  y(0, 0) = a.value().sum() / n;
  auto an = a.node();
  return detail::make_node<S>(std::move(y), {a}, [an, n](TensorNode<S>& self) {
    an->accumulate(Mat<S>::Constant(an->value.rows(), an->value.cols(), self.grad(0, 0) / n));
  });
}

/// Per-row sum, returning n x 1.
template <typename S>
Tensor<S> rowwise_sum(const Tensor<S>& a) {
  Mat<S> y = a.value().rowwise().sum();
  auto an = a.node();
  return detail::make_node<S>(std::move(y), {a}, [an](TensorNode<S>& self) {
    Mat<S> g = self.grad.col(0).replicate(1, an->value.cols());
    an->accumulate(g);
  });
}

/// Per-row minimum, n x 1; the subgradient flows to the (first) argmin.
template <typename S>
Tensor<S> rowwise_min(const Tensor<S>& a) {
  Mat<S> y(a.rows(), 1);
  std::vector<long> arg(static_cast<std::size_t>(a.rows()));
  for (long r = 0; r < a.rows(); ++r) {
    long j = 0;
    y(r, 0) = a.value().row(r).minCoeff(&j);
    arg[static_cast<std::size_t>(r)] = j;
  }
  auto an = a.node();
  return detail::make_node<S>(std::move(y), {a}, [an, arg](TensorNode<S>& self) {
    if (!an->requires_grad) return;
    Mat<S> g = Mat<S>::Zero(an->value.rows(), an->value.cols());
    for (long r = 0; r < an->value.rows(); ++r)
      g(r, arg[static_cast<std::size_t>(r)]) = self.grad(r, 0);
    an->accumulate(g);
  });
}

/// Rows scaled to unit L2 norm (smoothed near zero).
template <typename S>
Tensor<S> l2_normalize_rows(const Tensor<S>& a, S eps = S(1e-12)) {
  Mat<S> y(a.rows(), a.cols());
  Eigen::Matrix<S, Eigen::Dynamic, 1> nu(a.rows());
  for (long r = 0; r < a.rows(); ++r) {
    S n2 = a.value().row(r).squaredNorm();
    nu(r) = std::sqrt(n2 + eps * eps);
    y.row(r) = a.value().row(r) / nu(r);
  }
  auto an = a.node();
  Mat<S> yv = y;
  return detail::make_node<S>(std::move(y), {a}, [an, yv, nu](TensorNode<S>& self) {
    Mat<S> g(yv.rows(), yv.cols());
    for (long r = 0; r < yv.rows(); ++r) {
      S d = self.grad.row(r).dot(yv.row(r));
      g.row(r) = (self.grad.row(r) - yv.row(r) * d) / nu(r);
    }
    an->accumulate(g);
  });
}

/// Full n x n matrix of pairwise Euclidean distances between rows.
template <typename S>
Tensor<S> pairwise_distance(const Tensor<S>& a) {
  long n = a.rows();
  Mat<S> d(n, n);
  Eigen::Matrix<S, Eigen::Dynamic, 1> sq = a.value().rowwise().squaredNorm();
  Mat<S> dots = a.value() * a.value().transpose();
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < n; ++j) {
      S d2 = sq(i) + sq(j) - S(2) * dots(i, j);
      d(i, j) = std::sqrt(std::max(d2, S(0)));
    }
  auto an = a.node();
  Mat<S> dv = d;
  return detail::make_node<S>(std::move(d), {a}, [an, dv](TensorNode<S>& self) {
    const Mat<S>& x = an->value;
    long n = x.rows();
    Mat<S> g = Mat<S>::Zero(n, x.cols());
    for (long i = 0; i < n; ++i)
      for (long j = 0; j < n; ++j) {
        if (i == j || dv(i, j) <= S(1e-30)) continue;
        S w = (self.grad(i, j) + self.grad(j, i)) / dv(i, j);
        if (w != S(0)) g.row(i) += w * (x.row(i) - x.row(j));
      }
    an->accumulate(g);
  });
}

/// Same values, no graph edge across the boundary.
template <typename S>
Tensor<S> stop_gradient(const Tensor<S>& a) {
  return Tensor<S>(Mat<S>(a.value()), false);
}

/// Per-row L2 norms as n x 1 (reduction primitive).
template <typename S>
Tensor<S> rowwise_l2_norm(const Tensor<S>& a, S eps = S(1e-12)) {
  Mat<S> y(a.rows(), 1);
  for (long r = 0; r < a.rows(); ++r) y(r, 0) = std::sqrt(a.value().row(r).squaredNorm() + eps * eps);
  auto an = a.node();
  Mat<S> yv = y;
  return detail::make_node<S>(std::move(y), {a}, [an, yv](TensorNode<S>& self) {
    Mat<S> g(an->value.rows(), an->value.cols());
    for (long r = 0; r < an->value.rows(); ++r)
      g.row(r) = self.grad(r, 0) * an->value.row(r) / yv(r, 0);
    an->accumulate(g);
  });
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

/// Reverse accumulation from a scalar root. Visits each node exactly once in
/// reverse topological order; leaf gradients persist, intermediate gradients
/// and graph links are released as the traversal retires them.
template <typename S>
void backward(const Tensor<S>& root) {
  if (root.rows() != 1 || root.cols() != 1)
    throw GraphError("backward: root must be scalar, got " +
                     detail::shape_str(root.rows(), root.cols()));
  if (!root.requires_grad()) return;

  using NodeP = TensorNode<S>*;
  std::vector<std::shared_ptr<TensorNode<S>>> topo;
  std::unordered_set<NodeP> visited;
  // iterative postorder DFS over parents
  std::vector<std::pair<std::shared_ptr<TensorNode<S>>, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto child = node->parents[next++];
      if (child->requires_grad && !visited.count(child.get())) {
        visited.insert(child.get());
        stack.emplace_back(child, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->accumulate(Mat<S>::Constant(1, 1, S(1)));
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    auto& node = *it;
    if (node->backprop) node->backprop(*node);
    if (!node->leaf()) {
      node->grad.resize(0, 0);
      node->backprop = nullptr;
      node->parents.clear();
    }
  }
}

}  // namespace jbot
