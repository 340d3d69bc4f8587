#pragma once

// Small reverse-mode automatic differentiation over dense row-major tensors.
//
// A Tape records every primitive applied to its variables together with a
// pullback closure. Tape::backward walks the records in reverse order and
// accumulates gradients into every node that (transitively) depends on a
// leaf. Everything is double precision and single threaded per tape.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace maad::ad {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(numel(shape_), 0.0) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (numel(shape_) != data_.size()) {
      throw ShapeError("tensor shape " + to_string(shape_) + " holds " + std::to_string(numel(shape_)) +
                       " values, got " + std::to_string(data_.size()));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Row-major multi-index access.
  double& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
  double at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

  double item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
    return data_[0];
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  bool operator==(const Tensor&) const = default;

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) {
      throw ShapeError("index of rank " + std::to_string(index.size()) + " into tensor " + to_string(shape_));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      if (i >= shape_[axis]) throw ShapeError("index out of range for tensor " + to_string(shape_));
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  Shape shape_;
  std::vector<double> data_;
};

class Tape;

// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Receives the gradient flowing into the recorded node and must accumulate
  // the parents' contributions through Tape::grad_of.
  using Pullback = std::function<void(Tape&, std::span<const double>)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value) { return push(std::move(value), nullptr, true); }
  Var constant(Tensor value) { return push(std::move(value), nullptr, false); }

  // Records a primitive. `requires_grad` should be true iff any parent requires it;
  // the pullback is dropped otherwise.
  Var record(Tensor value, bool requires_grad, Pullback pullback) {
    return push(std::move(value), requires_grad ? std::move(pullback) : nullptr, requires_grad);
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient accumulator for `v`, allocated on first use. Empty span for nodes
  // that do not require a gradient, so pullbacks can skip them.
  std::span<double> grad_of(Var v) {
    Node& n = nodes_.at(v.id());
    if (!n.requires_grad) return {};
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }

  // Gradient of the last backward pass; zeros when `v` received none.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id());
    if (n.grad.empty()) return Tensor(n.value.shape());
    return Tensor(n.value.shape(), n.grad);
  }

  void backward(Var loss) {
    Node& root = nodes_.at(loss.id());
    if (root.value.size() != 1) {
      throw ShapeError("backward needs a scalar loss, got shape " + to_string(root.value.shape()));
    }
    for (Node& n : nodes_) n.grad.clear();
    if (!root.requires_grad) return;
    grad_of(loss)[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.pullback) continue;
      n.pullback(*this, n.grad);
    }
  }

 private:
  struct Node {
    Tensor value;
    Pullback pullback;
    bool requires_grad = false;
    std::vector<double> grad;
  };

  Var push(Tensor value, Pullback pullback, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), std::move(pullback), requires_grad, {}});
    return Var(this, nodes_.size() - 1);
  }

  // deque keeps node addresses stable while the tape grows.
  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }

namespace detail {

inline void require_same_tape(Var a, Var b, const char* op) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
}

inline void require_same_shape(Var a, Var b, const char* op) {
  require_same_tape(a, b, op);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

inline bool any_grad(std::initializer_list<Var> vars) {
  return std::any_of(vars.begin(), vars.end(), [](Var v) { return v.tape().requires_grad(v); });
}

// Elementwise unary op given value and derivative (in terms of input x and output y).
template <class F, class DF>
Var unary(Var x, F f, DF df) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  Tape& tape = x.tape();
  return tape.record(std::move(out), tape.requires_grad(x), [x, df](Tape& t, std::span<const double> g) {
    auto gx = t.grad_of(x);
    const Tensor& xv = t.value(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * df(xv[i]);
  });
}

}  // namespace detail

inline Var add(Var a, Var b) {
  detail::require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return a.tape().record(std::move(out), detail::any_grad({a, b}), [a, b](Tape& t, std::span<const double> g) {
    for (Var v : {a, b}) {
      auto gv = t.grad_of(v);
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += g[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return a.tape().record(std::move(out), detail::any_grad({a, b}), [a, b](Tape& t, std::span<const double> g) {
    auto ga = t.grad_of(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    auto gb = t.grad_of(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
  });
}

inline Var mul(Var a, Var b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.tape().record(std::move(out), detail::any_grad({a, b}), [a, b](Tape& t, std::span<const double> g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    auto ga = t.grad_of(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
    auto gb = t.grad_of(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
  });
}

inline Var div(Var a, Var b) {
  detail::require_same_shape(a, b, "div");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] / b.value()[i];
  return a.tape().record(std::move(out), detail::any_grad({a, b}), [a, b](Tape& t, std::span<const double> g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    auto ga = t.grad_of(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] / bv[i];
    auto gb = t.grad_of(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i] * av[i] / (bv[i] * bv[i]);
  });
}

inline Var scale(Var x, double c) {
  return detail::unary(x, [c](double v) { return c * v; }, [c](double) { return c; });
}

inline Var add_scalar(Var x, double c) {
  return detail::unary(x, [c](double v) { return v + c; }, [](double) { return 1.0; });
}

inline Var neg(Var x) { return scale(x, -1.0); }

inline Var square(Var x) {
  return detail::unary(x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

inline Var exp(Var x) {
  return detail::unary(x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

inline Var log(Var x) {
  return detail::unary(x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

inline Var tanh(Var x) {
  return detail::unary(
      x, [](double v) { return std::tanh(v); },
      [](double v) {
        const double th = std::tanh(v);
        return 1.0 - th * th;
      });
}

// log(1 - tanh(x)^2), stable for large |x| where 1 - tanh^2 underflows.
inline Var log_sech2(Var x) {
  return detail::unary(
      x,
      [](double v) {
        const double a = std::abs(v);
        return -2.0 * (a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0));
      },
      [](double v) { return -2.0 * std::tanh(v); });
}

// y = x + b with b broadcast along the last axis of x.
inline Var add_bias(Var x, Var b) {
  detail::require_same_tape(x, b, "add_bias");
  const Shape& xs = x.shape();
  if (b.value().rank() != 1 || xs.empty() || xs.back() != b.size()) {
    throw ShapeError("add_bias: bias " + to_string(b.shape()) + " does not match last axis of " + to_string(xs));
  }
  const std::size_t c = b.size();
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i % c];
  return x.tape().record(std::move(out), detail::any_grad({x, b}), [x, b, c](Tape& t, std::span<const double> g) {
    auto gx = t.grad_of(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    auto gb = t.grad_of(b);
    if (!gb.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % c] += g[i];
    }
  });
}

// Parametric rectifier with one slope per channel (last axis).
inline Var prelu(Var x, Var slope) {
  detail::require_same_tape(x, slope, "prelu");
  const Shape& xs = x.shape();
  if (slope.value().rank() != 1 || xs.empty() || xs.back() != slope.size()) {
    throw ShapeError("prelu: slope " + to_string(slope.shape()) + " does not match last axis of " + to_string(xs));
  }
  const std::size_t c = slope.size();
  const Tensor& xv = x.value();
  const Tensor& av = slope.value();
  Tensor out(xs);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : av[i % c] * xv[i];
  return x.tape().record(std::move(out), detail::any_grad({x, slope}),
                         [x, slope, c](Tape& t, std::span<const double> g) {
                           const Tensor& xv = t.value(x);
                           const Tensor& av = t.value(slope);
                           auto gx = t.grad_of(x);
                           if (!gx.empty()) {
                             for (std::size_t i = 0; i < g.size(); ++i) gx[i] += xv[i] > 0.0 ? g[i] : g[i] * av[i % c];
                           }
                           auto ga = t.grad_of(slope);
                           if (!ga.empty()) {
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               if (xv[i] <= 0.0) ga[i % c] += g[i] * xv[i];
                             }
                           }
                         });
}

// [m,k] x [k,n] -> [m,n]
inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b, "matmul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) {
    throw ShapeError("matmul: incompatible shapes " + to_string(as) + " and " + to_string(bs));
  }
  const std::size_t m = as[0], k = as[1], n = bs[1];
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  return a.tape().record(std::move(out), detail::any_grad({a, b}), [a, b, m, k, n](Tape& t, std::span<const double> g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    auto ga = t.grad_of(a);
    if (!ga.empty()) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += s;
        }
    }
    auto gb = t.grad_of(b);
    if (!gb.empty()) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

// Batched contraction "bij,bjc->bic": [B,m,k] x [B,k,n] -> [B,m,n].
// With a per-frame adjacency as `a` and node features as `b` this is the
// neighbourhood aggregation of a graph convolution.
inline Var batched_matmul(Var a, Var b) {
  detail::require_same_tape(a, b, "batched_matmul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0] || as[2] != bs[1]) {
    throw ShapeError("batched_matmul: incompatible shapes " + to_string(as) + " and " + to_string(bs));
  }
  const std::size_t nb = as[0], m = as[1], k = as[2], n = bs[2];
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out({nb, m, n});
  for (std::size_t q = 0; q < nb; ++q) {
    const double* A = av.data().data() + q * m * k;
    const double* B = bv.data().data() + q * k * n;
    double* C = out.data().data() + q * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A[i * k + p];
        for (std::size_t j = 0; j < n; ++j) C[i * n + j] += aip * B[p * n + j];
      }
  }
  return a.tape().record(
      std::move(out), detail::any_grad({a, b}), [a, b, nb, m, k, n](Tape& t, std::span<const double> g) {
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        auto ga = t.grad_of(a);
        auto gb = t.grad_of(b);
        for (std::size_t q = 0; q < nb; ++q) {
          const double* A = av.data().data() + q * m * k;
          const double* B = bv.data().data() + q * k * n;
          const double* G = g.data() + q * m * n;
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              if (!ga.empty()) {
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * B[p * n + j];
                ga[q * m * k + i * k + p] += s;
              }
              if (!gb.empty()) {
                const double aip = A[i * k + p];
                for (std::size_t j = 0; j < n; ++j) gb[q * k * n + p * n + j] += aip * G[i * n + j];
              }
            }
        }
      });
}

// Convolution along the leading (time) axis, stride 1, zero padding.
//   x: [L, B, Cin], w: [K, Cin, Cout], bias: [Cout] -> [L + 2*padding - K + 1, B, Cout]
// B is an independent batch axis (agents); channels are mixed, batch entries are not.
inline Var conv1d(Var x, Var w, Var bias, std::size_t padding) {
  detail::require_same_tape(x, w, "conv1d");
  detail::require_same_tape(x, bias, "conv1d");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 3 || ws.size() != 3 || ws[1] != xs[2] || bias.shape() != Shape{ws[2]} ||
      xs[0] + 2 * padding < ws[0]) {
    throw ShapeError("conv1d: input " + to_string(xs) + ", kernel " + to_string(ws) + ", bias " +
                     to_string(bias.shape()) + " incompatible");
  }
  const std::size_t L = xs[0], nb = xs[1], cin = xs[2], K = ws[0], cout = ws[2];
  const std::size_t lout = L + 2 * padding - K + 1;
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = bias.value();
  Tensor out({lout, nb, cout});
  for (std::size_t l = 0; l < lout; ++l)
    for (std::size_t b = 0; b < nb; ++b) {
      double* o = out.data().data() + (l * nb + b) * cout;
      for (std::size_t c = 0; c < cout; ++c) o[c] = bv[c];
      for (std::size_t k = 0; k < K; ++k) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(l + k) - static_cast<std::ptrdiff_t>(padding);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(L)) continue;
        const double* in = xv.data().data() + (static_cast<std::size_t>(src) * nb + b) * cin;
        const double* wk = wv.data().data() + k * cin * cout;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const double v = in[ci];
          for (std::size_t c = 0; c < cout; ++c) o[c] += v * wk[ci * cout + c];
        }
      }
    }
  return x.tape().record(
      std::move(out), detail::any_grad({x, w, bias}),
      [=](Tape& t, std::span<const double> g) {
        const Tensor& xv = t.value(x);
        const Tensor& wv = t.value(w);
        auto gx = t.grad_of(x);
        auto gw = t.grad_of(w);
        auto gbias = t.grad_of(bias);
        for (std::size_t l = 0; l < lout; ++l)
          for (std::size_t b = 0; b < nb; ++b) {
            const double* go = g.data() + (l * nb + b) * cout;
            if (!gbias.empty())
              for (std::size_t c = 0; c < cout; ++c) gbias[c] += go[c];
            for (std::size_t k = 0; k < K; ++k) {
              const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(l + k) - static_cast<std::ptrdiff_t>(padding);
              if (src < 0 || src >= static_cast<std::ptrdiff_t>(L)) continue;
              const std::size_t in_off = (static_cast<std::size_t>(src) * nb + b) * cin;
              const double* wk = wv.data().data() + k * cin * cout;
              for (std::size_t ci = 0; ci < cin; ++ci) {
                if (!gx.empty()) {
                  double s = 0.0;
                  for (std::size_t c = 0; c < cout; ++c) s += go[c] * wk[ci * cout + c];
                  gx[in_off + ci] += s;
                }
                if (!gw.empty()) {
                  const double v = xv[in_off + ci];
                  for (std::size_t c = 0; c < cout; ++c) gw[k * cin * cout + ci * cout + c] += v * go[c];
                }
              }
            }
          }
      });
}

// 2-D convolution, stride 1, zero padding.
//   x: [H, W, Cin], w: [KH, KW, Cin, Cout], bias: [Cout] -> [H + 2ph - KH + 1, W + 2pw - KW + 1, Cout]
inline Var conv2d(Var x, Var w, Var bias, std::size_t pad_h, std::size_t pad_w) {
  detail::require_same_tape(x, w, "conv2d");
  detail::require_same_tape(x, bias, "conv2d");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 3 || ws.size() != 4 || ws[2] != xs[2] || bias.shape() != Shape{ws[3]} ||
      xs[0] + 2 * pad_h < ws[0] || xs[1] + 2 * pad_w < ws[1]) {
    throw ShapeError("conv2d: input " + to_string(xs) + ", kernel " + to_string(ws) + ", bias " +
                     to_string(bias.shape()) + " incompatible");
  }
  const std::size_t H = xs[0], W = xs[1], cin = xs[2], KH = ws[0], KW = ws[1], cout = ws[3];
  const std::size_t hout = H + 2 * pad_h - KH + 1;
  const std::size_t wout = W + 2 * pad_w - KW + 1;
  const auto src_index = [=](std::size_t o, std::size_t k, std::size_t pad, std::size_t extent) -> std::ptrdiff_t {
    const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(o + k) - static_cast<std::ptrdiff_t>(pad);
    return (s < 0 || s >= static_cast<std::ptrdiff_t>(extent)) ? -1 : s;
  };
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = bias.value();
  Tensor out({hout, wout, cout});
  for (std::size_t oh = 0; oh < hout; ++oh)
    for (std::size_t ow = 0; ow < wout; ++ow) {
      double* o = out.data().data() + (oh * wout + ow) * cout;
      for (std::size_t c = 0; c < cout; ++c) o[c] = bv[c];
      for (std::size_t kh = 0; kh < KH; ++kh) {
        const auto sh = src_index(oh, kh, pad_h, H);
        if (sh < 0) continue;
        for (std::size_t kw = 0; kw < KW; ++kw) {
          const auto sw = src_index(ow, kw, pad_w, W);
          if (sw < 0) continue;
          const double* in = xv.data().data() + (static_cast<std::size_t>(sh) * W + static_cast<std::size_t>(sw)) * cin;
          const double* wk = wv.data().data() + (kh * KW + kw) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t c = 0; c < cout; ++c) o[c] += in[ci] * wk[ci * cout + c];
        }
      }
    }
  return x.tape().record(
      std::move(out), detail::any_grad({x, w, bias}), [=](Tape& t, std::span<const double> g) {
        const Tensor& xv = t.value(x);
        const Tensor& wv = t.value(w);
        auto gx = t.grad_of(x);
        auto gw = t.grad_of(w);
        auto gbias = t.grad_of(bias);
        for (std::size_t oh = 0; oh < hout; ++oh)
          for (std::size_t ow = 0; ow < wout; ++ow) {
            const double* go = g.data() + (oh * wout + ow) * cout;
            if (!gbias.empty())
              for (std::size_t c = 0; c < cout; ++c) gbias[c] += go[c];
            for (std::size_t kh = 0; kh < KH; ++kh) {
              const auto sh = src_index(oh, kh, pad_h, H);
              if (sh < 0) continue;
              for (std::size_t kw = 0; kw < KW; ++kw) {
                const auto sw = src_index(ow, kw, pad_w, W);
                if (sw < 0) continue;
                const std::size_t in_off = (static_cast<std::size_t>(sh) * W + static_cast<std::size_t>(sw)) * cin;
                const std::size_t w_off = (kh * KW + kw) * cin * cout;
                for (std::size_t ci = 0; ci < cin; ++ci)
                  for (std::size_t c = 0; c < cout; ++c) {
                    if (!gx.empty()) gx[in_off + ci] += go[c] * wv[w_off + ci * cout + c];
                    if (!gw.empty()) gw[w_off + ci * cout + c] += xv[in_off + ci] * go[c];
                  }
              }
            }
          }
      });
}

inline Var reshape(Var x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  Tensor out(std::move(shape), x.value().storage());
  return x.tape().record(std::move(out), x.tape().requires_grad(x), [x](Tape& t, std::span<const double> g) {
    auto gx = t.grad_of(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
  });
}

// Axis permutation: out.shape[i] = x.shape[axes[i]].
inline Var permute(Var x, std::vector<std::size_t> axes) {
  const Shape& xs = x.shape();
  const std::size_t r = xs.size();
  std::vector<bool> seen(r, false);
  if (axes.size() != r) throw ShapeError("permute: axes of rank " + std::to_string(axes.size()) + " for " + to_string(xs));
  for (std::size_t a : axes) {
    if (a >= r || seen[a]) throw ShapeError("permute: invalid axis list for tensor " + to_string(xs));
    seen[a] = true;
  }
  Shape os(r);
  for (std::size_t i = 0; i < r; ++i) os[i] = xs[axes[i]];
  // in_stride[axes[i]] is the input stride walked by output axis i.
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * xs[i];
  std::vector<std::size_t> src_of(x.size());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < src_of.size(); ++o) {
    std::size_t s = 0;
    for (std::size_t i = 0; i < r; ++i) s += idx[i] * in_stride[axes[i]];
    src_of[o] = s;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < os[i]) break;
      idx[i] = 0;
    }
  }
  Tensor out(os);
  const Tensor& xv = x.value();
  for (std::size_t o = 0; o < src_of.size(); ++o) out[o] = xv[src_of[o]];
  return x.tape().record(std::move(out), x.tape().requires_grad(x),
                         [x, src_of = std::move(src_of)](Tape& t, std::span<const double> g) {
                           auto gx = t.grad_of(x);
                           for (std::size_t o = 0; o < src_of.size(); ++o) gx[src_of[o]] += g[o];
                         });
}

// Channels [begin, end) of the last axis.
inline Var slice_last(Var x, std::size_t begin, std::size_t end) {
  const Shape& xs = x.shape();
  if (xs.empty() || begin >= end || end > xs.back()) {
    throw ShapeError("slice_last: range [" + std::to_string(begin) + "," + std::to_string(end) + ") out of " +
                     to_string(xs));
  }
  const std::size_t c = xs.back();
  const std::size_t w = end - begin;
  const std::size_t rows = x.size() / c;
  Shape os = xs;
  os.back() = w;
  Tensor out(os);
  const Tensor& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] = xv[r * c + begin + j];
  return x.tape().record(std::move(out), x.tape().requires_grad(x), [=](Tape& t, std::span<const double> g) {
    auto gx = t.grad_of(x);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) gx[r * c + begin + j] += g[r * w + j];
  });
}

inline Var sum(Var x) {
  const Tensor& xv = x.value();
  double s = 0.0;
  for (double v : xv.data()) s += v;
  return x.tape().record(Tensor::scalar(s), x.tape().requires_grad(x), [x](Tape& t, std::span<const double> g) {
    auto gx = t.grad_of(x);
    for (double& v : gx) v += g[0];
  });
}

inline Var mean(Var x) {
  if (x.size() == 0) throw ShapeError("mean of empty tensor " + to_string(x.shape()));
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

// Maximum relative error between reverse-mode and central-difference gradients.
struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t param = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

using Objective = std::function<Var(Tape&, std::span<const Var>)>;

// Relative error per coordinate is |ga - gn| / max(1e-8, |ga| + |gn|).
inline GradCheckReport grad_check(const Objective& f, std::span<const Tensor> params, double epsilon = 1e-5) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& p : params) vars.push_back(tape.leaf(p));
    Var loss = f(tape, vars);
    tape.backward(loss);
    for (Var v : vars) analytic.push_back(tape.grad(v));
  }
  const auto evaluate = [&](const std::vector<Tensor>& ps) {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& p : ps) vars.push_back(tape.constant(p));
    return f(tape, vars).value().item();
  };

  GradCheckReport report;
  std::vector<Tensor> work(params.begin(), params.end());
  for (std::size_t p = 0; p < work.size(); ++p) {
    for (std::size_t i = 0; i < work[p].size(); ++i) {
      const double orig = work[p][i];
      work[p][i] = orig + epsilon;
      const double up = evaluate(work);
      work[p][i] = orig - epsilon;
      const double down = evaluate(work);
      work[p][i] = orig;
      const double gn = (up - down) / (2.0 * epsilon);
      const double ga = analytic[p][i];
      const double rel = std::abs(ga - gn) / std::max(1e-8, std::abs(ga) + std::abs(gn));
      ++report.coordinates;
      if (rel > report.max_relative_error || report.coordinates == 1) {
        report.max_relative_error = rel;
        report.param = p;
        report.index = i;
        report.analytic = ga;
        report.numeric = gn;
      }
    }
  }
  return report;
}

}  // namespace maad::ad
