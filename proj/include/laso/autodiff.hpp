#pragma once

// Tape-based reverse-mode differentiation over the small set of dense
// primitives the operator networks and their losses are built from.
//
// A Tape owns every intermediate value of one forward pass. Parameters live
// outside the tape; `Tape::param` links them in as leaves and `backward`
// accumulates into their `grad()` buffers. Nodes are appended in evaluation
// order, so a reverse sweep over the node list is a valid topological order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "laso/errors.hpp"
#include "laso/rng.hpp"
#include "laso/tensor.hpp"

namespace laso::ad {

enum class Mode { kTrain, kEval };

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Links an external parameter as a leaf. Gradients flow into it only if
  /// `t.requires_grad()` is set.
  Var param(Tensor& t) {
    Node n;
    n.value = Tensor(t.shape(), t.values());
    n.requires_grad = t.requires_grad();
    n.leaf = &t;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  /// A value that never receives gradient.
  Var constant(Tensor t) {
    Node n;
    n.value = std::move(t);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  /// Appends a derived node. `inputs` must already be on this tape.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
    bool rg = false;
    for (auto i : inputs) rg = rg || nodes_.at(i).requires_grad;
    Node n;
    n.value = std::move(value);
    n.requires_grad = rg;
    n.inputs = std::move(inputs);
    if (rg) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of node `id`, allocated on first access.
  std::vector<double>& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.numel(), 0.0);
    return n.grad;
  }

  /// Reverse sweep from a scalar loss. Leaf parameter grads accumulate
  /// across calls until the caller zeroes them.
  void backward(Var loss) {
    if (loss.shape().size() != 0 && loss.value().numel() != 1) {
      throw ShapeError("backward: loss must be scalar, got shape " +
                       shape_str(loss.shape()));
    }
    for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
    grad(loss.id())[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.leaf) {
        auto& g = n.leaf->grad();
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += nodes_[i].grad[k];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

  /// Smallest distance of any recorded non-smooth op input to its kink.
  /// Finite-difference checks use this to reject instances sitting on a
  /// kink, where the one-sided derivatives disagree.
  double kink_margin() const { return kink_margin_; }
  void note_kink(double distance) {
    kink_margin_ = std::min(kink_margin_, std::abs(distance));
    // Which side of each kink the inputs fell on, in recording order.
    kink_sides_ = kink_sides_ * 0x100000001b3ULL ^ (distance > 0.0 ? 0x9eULL : 0x3dULL);
  }
  /// Hash of the side pattern; equal patterns mean the same linear piece.
  std::uint64_t kink_sides() const { return kink_sides_; }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    Tensor* leaf = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  double kink_margin_ = std::numeric_limits<double>::infinity();
  std::uint64_t kink_sides_ = 0xcbf29ce484222325ULL;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

namespace detail {

inline void require_same_tape(const Var& a, const Var& b, const char* op) {
  if (&a.tape() != &b.tape()) {
    throw Error(std::string(op) + ": operands live on different tapes");
  }
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  require_same_tape(a, b, op);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

inline void require_matrix(const Var& a, const char* op) {
  if (a.shape().size() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " +
                     shape_str(a.shape()));
  }
}

// Elementwise unary op given f(x) and f'(x, y).
template <typename F, typename DF>
Var unary(const Var& x, F f, DF df) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = f(xv[i]);
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {xi}, [xi, df](Tape& t, std::size_t self) {
    if (!t.requires_grad(xi)) return;
    const auto& xv = t.value(xi);
    const auto& yv = t.value(self);
    const auto& gy = t.grad(self);
    auto& gx = t.grad(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * df(xv[i], yv[i]);
  });
}

// Elementwise binary op given f(a, b) and the partials (da, db).
template <typename F, typename DA, typename DB>
Var binary(const Var& a, const Var& b, const char* name, F f, DA da, DB db) {
  require_same_shape(a, b, name);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = f(av[i], bv[i]);
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {ai, bi}, [ai, bi, da, db](Tape& t, std::size_t self) {
    const auto& av = t.value(ai);
    const auto& bv = t.value(bi);
    const auto& gy = t.grad(self);
    if (t.requires_grad(ai)) {
      auto& ga = t.grad(ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * da(av[i], bv[i]);
    }
    if (t.requires_grad(bi)) {
      auto& gb = t.grad(bi);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * db(av[i], bv[i]);
    }
  });
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline double sigmoid_value(double x) { return detail::stable_sigmoid(x); }

// ---------------------------------------------------------------------------
// Linear algebra

/// a (m×k) · b (k×n), or a · bᵀ when `transpose_b` (b is n×k).
inline Var matmul(const Var& a, const Var& b, bool transpose_b = false) {
  detail::require_same_tape(a, b, "matmul");
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t m = av.shape()[0], k = av.shape()[1];
  const std::size_t bk = transpose_b ? bv.shape()[1] : bv.shape()[0];
  const std::size_t n = transpose_b ? bv.shape()[0] : bv.shape()[1];
  if (k != bk) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(av.shape()) +
                     (transpose_b ? " x transpose " : " x ") + shape_str(bv.shape()));
  }
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double* o = &out[i * n];
    const double* arow = &av[i * k];
    if (transpose_b) {
      for (std::size_t j = 0; j < n; ++j) {
        const double* brow = &bv[j * k];
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
        o[j] = s;
      }
    } else {
      for (std::size_t p = 0; p < k; ++p) {
        const double ap = arow[p];
        const double* brow = &bv[p * n];
        for (std::size_t j = 0; j < n; ++j) o[j] += ap * brow[j];
      }
    }
  }
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {ai, bi}, [=](Tape& t, std::size_t self) {
    const auto& av = t.value(ai);
    const auto& bv = t.value(bi);
    const auto& g = t.grad(self);
    if (t.requires_grad(ai)) {
      // dA = G · B'ᵀ where B' is the effective right operand (k×n).
      auto& ga = t.grad(ai);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = g[i * n + j];
          if (gij == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) {
            ga[i * k + p] += gij * (transpose_b ? bv[j * k + p] : bv[p * n + j]);
          }
        }
      }
    }
    if (t.requires_grad(bi)) {
      auto& gb = t.grad(bi);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = g[i * n + j];
          if (gij == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) {
            if (transpose_b) {
              gb[j * k + p] += gij * av[i * k + p];
            } else {
              gb[p * n + j] += gij * av[i * k + p];
            }
          }
        }
      }
    }
  });
}

/// x (B×n) + bias broadcast over rows; bias has n elements.
inline Var add_bias(const Var& x, const Var& bias) {
  detail::require_same_tape(x, bias, "add_bias");
  detail::require_matrix(x, "add_bias");
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  const std::size_t rows = xv.shape()[0], n = xv.shape()[1];
  if (bv.numel() != n) {
    throw ShapeError("add_bias: bias shape " + shape_str(bv.shape()) +
                     " does not match columns of " + shape_str(xv.shape()));
  }
  Tensor out = xv;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bv[c];
  const std::size_t xi = x.id(), bi = bias.id();
  return x.tape().record(std::move(out), {xi, bi}, [=](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(xi)) {
      auto& gx = t.grad(xi);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(bi)) {
      auto& gb = t.grad(bi);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
    }
  });
}

/// Row-wise concatenation [a | b] of two matrices with equal row counts.
inline Var concat_lastdim(const Var& a, const Var& b) {
  detail::require_same_tape(a, b, "concat_lastdim");
  detail::require_matrix(a, "concat_lastdim");
  detail::require_matrix(b, "concat_lastdim");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t rows = av.shape()[0];
  if (bv.shape()[0] != rows) {
    throw ShapeError("concat_lastdim: row counts differ, " + shape_str(av.shape()) +
                     " vs " + shape_str(bv.shape()));
  }
  const std::size_t p = av.shape()[1], q = bv.shape()[1];
  Tensor out = Tensor::matrix(rows, p + q);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(&av[r * p], p, &out[r * (p + q)]);
    std::copy_n(&bv[r * q], q, &out[r * (p + q) + p]);
  }
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {ai, bi}, [=](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ai)) {
      auto& ga = t.grad(ai);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < p; ++c) ga[r * p + c] += g[r * (p + q) + c];
    }
    if (t.requires_grad(bi)) {
      auto& gb = t.grad(bi);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < q; ++c) gb[r * q + c] += g[r * (p + q) + p + c];
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
  return detail::binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Var sub(const Var& a, const Var& b) {
  return detail::binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Var mul(const Var& a, const Var& b) {
  return detail::binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

// max/min route the gradient to the first operand on ties.
inline Var max(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "max");
  for (std::size_t i = 0; i < a.value().numel(); ++i)
    a.tape().note_kink(a.value()[i] - b.value()[i]);
  return detail::binary(
      a, b, "max", [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

inline Var min(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "min");
  for (std::size_t i = 0; i < a.value().numel(); ++i)
    a.tape().note_kink(a.value()[i] - b.value()[i]);
  return detail::binary(
      a, b, "min", [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

inline Var relu(const Var& x) {
  for (double v : x.value().data()) x.tape().note_kink(v);
  return detail::unary(
      x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

inline Var leaky_relu(const Var& x, double slope = 0.01) {
  for (double v : x.value().data()) x.tape().note_kink(v);
  return detail::unary(
      x, [slope](double v) { return v > 0 ? v : slope * v; },
      [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

inline Var sigmoid(const Var& x) {
  return detail::unary(
      x, [](double v) { return detail::stable_sigmoid(v); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var log(const Var& x) {
  return detail::unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Var square(const Var& x) {
  return detail::unary(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

/// Derivative at 0 is taken as 0 (subgradient of a norm at the origin).
inline Var sqrt(const Var& x) {
  for (double v : x.value().data()) x.tape().note_kink(v);
  return detail::unary(
      x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return y > 0 ? 0.5 / y : 0.0; });
}

inline Var scale(const Var& x, double c) {
  return detail::unary(
      x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::size_t xi = x.id();
  return x.tape().record(Tensor::scalar(s), {xi}, [xi](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    auto& gx = t.grad(xi);
    for (auto& v : gx) v += g;
  });
}

inline Var mean(const Var& x) {
  const auto n = static_cast<double>(x.value().numel());
  return scale(sum(x), 1.0 / n);
}

/// Sums each row of a matrix: (B×n) -> (B).
inline Var sum_rows(const Var& x) {
  detail::require_matrix(x, "sum_rows");
  const Tensor& xv = x.value();
  const std::size_t rows = xv.shape()[0], n = xv.shape()[1];
  Tensor out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += xv[r * n + c];
    out[r] = s;
  }
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {xi}, [=](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(xi);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += g[r];
  });
}

// ---------------------------------------------------------------------------
// Normalization and regularization

struct BatchNormConfig {
  double eps = 1e-5;
  double momentum = 0.1;
};

namespace detail {
inline void check_bn_shapes(const Var& x, const Var& gamma, const Var& beta,
                            const Tensor& running_mean, const Tensor& running_var) {
  require_same_tape(x, gamma, "batch_norm");
  require_same_tape(x, beta, "batch_norm");
  require_matrix(x, "batch_norm");
  const std::size_t n = x.shape()[1];
  if (gamma.value().numel() != n || beta.value().numel() != n ||
      running_mean.numel() != n || running_var.numel() != n) {
    throw ShapeError("batch_norm: parameter shapes " + shape_str(gamma.shape()) + ", " +
                     shape_str(beta.shape()) + " do not match features of " +
                     shape_str(x.shape()));
  }
}
}  // namespace detail

/// Eval-mode batch normalization: a fixed affine map from running stats.
inline Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta,
                           const Tensor& running_mean, const Tensor& running_var,
                           BatchNormConfig cfg = {}) {
  detail::check_bn_shapes(x, gamma, beta, running_mean, running_var);
  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  const std::size_t rows = xv.shape()[0], n = xv.shape()[1];
  std::vector<double> inv_std(n);
  for (std::size_t c = 0; c < n; ++c) inv_std[c] = 1.0 / std::sqrt(running_var[c] + cfg.eps);
  std::vector<double> mu(running_mean.values());
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < n; ++c)
      out[r * n + c] = gv[c] * (xv[r * n + c] - mu[c]) * inv_std[c] + bv[c];
  const std::size_t xi = x.id(), gi = gamma.id(), bi = beta.id();
  return x.tape().record(std::move(out), {xi, gi, bi}, [=](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(xi);
    const auto& gv = t.value(gi);
    if (t.requires_grad(xi)) {
      auto& gx = t.grad(xi);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += g[r * n + c] * gv[c] * inv_std[c];
    }
    if (t.requires_grad(gi)) {
      auto& gg = t.grad(gi);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < n; ++c)
          gg[c] += g[r * n + c] * (xv[r * n + c] - mu[c]) * inv_std[c];
    }
    if (t.requires_grad(bi)) {
      auto& gb = t.grad(bi);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
    }
  });
}

/// Train-mode batch normalization of x (B×n) with affine gamma/beta (n).
///
/// Normalizes with the biased batch variance and folds the batch statistics
/// into the running buffers (unbiased variance), momentum-weighted.
inline Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta,
                            Tensor& running_mean, Tensor& running_var,
                            BatchNormConfig cfg = {}) {
  detail::check_bn_shapes(x, gamma, beta, running_mean, running_var);
  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  const std::size_t rows = xv.shape()[0], n = xv.shape()[1];
  if (rows < 2) {
    throw ShapeError("batch_norm: train mode needs at least 2 rows, got shape " +
                     shape_str(xv.shape()));
  }
  std::vector<double> mu(n, 0.0), var(n, 0.0), inv_std(n);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < n; ++c) mu[c] += xv[r * n + c];
  for (auto& m : mu) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const double d = xv[r * n + c] - mu[c];
      var[c] += d * d;
    }
  for (auto& v : var) v /= static_cast<double>(rows);
  for (std::size_t c = 0; c < n; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + cfg.eps);

  Tensor out(xv.shape());
  std::vector<double> xhat(rows * n);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      xhat[r * n + c] = (xv[r * n + c] - mu[c]) * inv_std[c];
      out[r * n + c] = gv[c] * xhat[r * n + c] + bv[c];
    }

  const double unbias = static_cast<double>(rows) / static_cast<double>(rows - 1);
  for (std::size_t c = 0; c < n; ++c) {
    running_mean[c] = (1.0 - cfg.momentum) * running_mean[c] + cfg.momentum * mu[c];
    running_var[c] = (1.0 - cfg.momentum) * running_var[c] + cfg.momentum * var[c] * unbias;
  }

  const std::size_t xi = x.id(), gi = gamma.id(), bi = beta.id();
  return x.tape().record(std::move(out), {xi, gi, bi},
                         [=, xhat = std::move(xhat)](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& gv = t.value(gi);
    const double bn = static_cast<double>(rows);
    if (t.requires_grad(xi)) {
      auto& gx = t.grad(xi);
      for (std::size_t c = 0; c < n; ++c) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
          sum_g += g[r * n + c];
          sum_gx += g[r * n + c] * xhat[r * n + c];
        }
        const double k = gv[c] * inv_std[c] / bn;
        for (std::size_t r = 0; r < rows; ++r) {
          gx[r * n + c] += k * (bn * g[r * n + c] - sum_g - xhat[r * n + c] * sum_gx);
        }
      }
    }
    if (t.requires_grad(gi)) {
      auto& gg = t.grad(gi);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < n; ++c) gg[c] += g[r * n + c] * xhat[r * n + c];
    }
    if (t.requires_grad(bi)) {
      auto& gb = t.grad(bi);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
    }
  });
}

inline Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                      Tensor& running_var, Mode mode, BatchNormConfig cfg = {}) {
  if (mode == Mode::kEval) return batch_norm_eval(x, gamma, beta, running_mean, running_var, cfg);
  return batch_norm_train(x, gamma, beta, running_mean, running_var, cfg);
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else
/// 1/(1-rate).
inline Tensor dropout_mask(const Shape& shape, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  Tensor mask(shape, 1.0);
  if (rate == 0.0) return mask;
  const double s = 1.0 / (1.0 - rate);
  for (auto& v : mask.values()) v = uniform01(rng) < rate ? 0.0 : s;
  return mask;
}

/// Applies a precomputed dropout mask (train mode) or passes through (eval).
inline Var dropout(const Var& x, const Tensor* mask, Mode mode) {
  if (mode == Mode::kEval || mask == nullptr) return x;
  if (mask->shape() != x.shape()) {
    throw ShapeError("dropout: mask shape " + shape_str(mask->shape()) +
                     " does not match input " + shape_str(x.shape()));
  }
  return mul(x, x.tape().constant(*mask));
}

// ---------------------------------------------------------------------------
// Losses

/// Binary cross-entropy on logits, summed over classes, one value per row.
///
/// Uses softplus(s) - l*s, which stays finite for any finite score. Entries
/// of `class_weight` (length = columns) scale each class's term; a zero
/// weight removes the class from the loss.
inline Var bce_with_logits(const Var& scores, const Tensor& targets,
                           std::span<const double> class_weight = {}) {
  detail::require_matrix(scores, "bce_with_logits");
  const Tensor& sv = scores.value();
  if (targets.shape() != sv.shape()) {
    throw ShapeError("bce_with_logits: scores " + shape_str(sv.shape()) +
                     " vs targets " + shape_str(targets.shape()));
  }
  const std::size_t rows = sv.shape()[0], n = sv.shape()[1];
  if (!class_weight.empty() && class_weight.size() != n) {
    throw ShapeError("bce_with_logits: class weights have length " +
                     std::to_string(class_weight.size()) + ", expected " + std::to_string(n));
  }
  std::vector<double> w(n, 1.0);
  if (!class_weight.empty()) w.assign(class_weight.begin(), class_weight.end());
  Tensor out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double s = sv[r * n + c];
      const double l = targets[r * n + c];
      // The linear part first, so confident correct scores do not cancel.
      acc += w[c] * ((std::max(s, 0.0) - l * s) + std::log1p(std::exp(-std::abs(s))));
    }
    out[r] = acc;
  }
  const std::size_t si = scores.id();
  return scores.tape().record(std::move(out), {si}, [=](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& sv = t.value(si);
    auto& gs = t.grad(si);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        const double p = detail::stable_sigmoid(sv[r * n + c]);
        gs[r * n + c] += g[r] * w[c] * (p - targets[r * n + c]);
      }
  });
}

}  // namespace laso::ad
