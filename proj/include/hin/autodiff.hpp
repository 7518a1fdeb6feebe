#pragma once

// Tape-based reverse-mode differentiation over dense double tensors.
//
// Every op computes its value eagerly and, when any input needs a gradient,
// appends a backward closure to the tape. Node ids are assigned in creation
// order, so the tape is already topologically sorted and backward() walks it
// once in reverse.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <type_traits>
#include <vector>

#include "hin/errors.hpp"
#include "hin/params.hpp"
#include "hin/random.hpp"
#include "hin/tensor.hpp"

namespace hin::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor v) { return push(Node{std::move(v)}); }

  // Leaf owned by the tape; its gradient accumulates across backward() calls.
  Var leaf(Tensor v, bool requires_grad = true) {
    Node n{std::move(v)};
    n.needs_grad = requires_grad;
    return push(std::move(n));
  }

  // Leaf aliasing a trainable parameter: gradients are added into p.grad.
  // Frozen parameters behave as constants.
  Var param(Parameter& p) {
    Node n;
    n.external = &p.value;
    if (!p.frozen) {
      n.external_grad = &p.grad;
      n.needs_grad = true;
    }
    return push(std::move(n));
  }

  // Read-only view of a parameter (evaluation passes).
  Var param(const Parameter& p) {
    Node n;
    n.external = &p.value;
    return push(std::move(n));
  }

  Var record(const char* op, Tensor value, std::span<const Var> inputs, Backward fn) {
    Node n{std::move(value)};
    n.op = op;
    for (const Var& in : inputs) {
      check_owned(in, op);
      if (nodes_[in.id].needs_grad) n.needs_grad = true;
    }
    if (n.needs_grad) n.backward = std::move(fn);
    return push(std::move(n));
  }

  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, Backward fn) {
    return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(fn));
  }

  const Tensor& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.external ? *n.external : n.own;
  }

  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  // Gradient accumulator for a node, allocated as zeros on first access.
  Tensor& grad(Var v) {
    Node& n = nodes_[v.id];
    if (n.external_grad) return *n.external_grad;
    if (!n.has_grad) {
      n.grad = Tensor(value(v).shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  // Current gradient of a node, zeros when nothing has flowed into it.
  Tensor grad_of(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.external_grad) return *n.external_grad;
    if (n.has_grad) return n.grad;
    return Tensor(value(v).shape());
  }

  void backward(Var loss) {
    if (loss.tape != this || loss.id >= nodes_.size()) {
      throw Error("backward: loss is not a node of this tape");
    }
    if (!value(loss).is_scalar()) {
      throw DimensionError("backward: loss must be a scalar, got shape " +
                           shape_str(value(loss).shape()));
    }
    // Interior gradients belong to a single pass; leaf and parameter
    // gradients keep accumulating.
    for (Node& n : nodes_) {
      if (n.backward) n.has_grad = false;
    }
    grad(loss)[0] += 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || !n.has_grad) continue;
      if (!fault_op_.empty() && fault_op_ == n.op) {
        Tensor scaled = n.grad;
        for (auto& g : scaled.values()) g *= fault_factor_;
        n.backward(*this, scaled);
      } else {
        n.backward(*this, n.grad);
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

  // Test hook: scales the incoming gradient of every `op` node by `factor`
  // during backward, corrupting that op's backward rule.
  void inject_fault(std::string op, double factor) {
    fault_op_ = std::move(op);
    fault_factor_ = factor;
  }

  // ReLU activation pattern seen during the forward pass. Gradient checks
  // compare signatures to detect probes that straddle a kink.
  void note_relu(std::span<const double> x) {
    for (double v : x) {
      kink_signature_ = (kink_signature_ ^ (v > 0.0 ? 0x9dULL : 0x3bULL)) * 0x100000001b3ULL;
      kink_margin_ = std::min(kink_margin_, std::abs(v));
    }
  }
  std::uint64_t kink_signature() const { return kink_signature_; }
  double kink_margin() const { return kink_margin_; }

 private:
  struct Node {
    Node() = default;
    explicit Node(Tensor v) : own(std::move(v)) {}

    Tensor own;
    const Tensor* external = nullptr;
    Tensor* external_grad = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool needs_grad = false;
    const char* op = "leaf";
    Backward backward;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  void check_owned(Var v, const char* op) const {
    if (v.tape != this || v.id >= nodes_.size()) {
      throw Error(std::string(op) + ": operand belongs to a different tape");
    }
  }

  std::deque<Node> nodes_;
  std::string fault_op_;
  double fault_factor_ = 1.0;
  std::uint64_t kink_signature_ = 0xcbf29ce484222325ULL;
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

inline const Tensor& Var::value() const { return tape->value(*this); }

namespace detail {

// `msg` is either a string or a callable producing one; callables are only
// invoked on failure so hot paths never format messages.
template <typename Msg>
inline void require(bool ok, Msg&& msg) {
  if (ok) return;
  if constexpr (std::is_invocable_v<Msg>) {
    throw DimensionError(msg());
  } else {
    throw DimensionError(std::string(msg));
  }
}

inline std::string shapes(const char* op, const Tensor& a, const Tensor& b) {
  return std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
         shape_str(b.shape());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

enum class Broadcast { kNone, kLeftScalar, kRightScalar };

inline Broadcast binary_broadcast(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (a.is_scalar()) return Broadcast::kLeftScalar;
  if (b.is_scalar()) return Broadcast::kRightScalar;
  throw DimensionError(shapes(op, a, b));
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, Broadcast mode, F f) {
  if (mode == Broadcast::kLeftScalar) {
    Tensor out(b.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[0], b[i]);
    return out;
  }
  Tensor out(a.shape());
  const bool bs = mode == Broadcast::kRightScalar;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], bs ? b[0] : b[i]);
  return out;
}

// Adds `g` (shaped like the op output) into the gradient of an operand that
// may have been broadcast from a scalar.
inline void accumulate(Tape& t, Var v, const Tensor& g, bool scalar_operand) {
  Tensor& gv = t.grad(v);
  if (scalar_operand) {
    double s = 0.0;
    for (double x : g.values()) s += x;
    gv[0] += s;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
  }
}

}  // namespace detail

inline Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  auto mode = detail::binary_broadcast("add", av, bv);
  Tensor out = detail::zip(av, bv, mode, [](double x, double y) { return x + y; });
  return a.tape->record("add", std::move(out), {a, b}, [a, b, mode](Tape& t, const Tensor& g) {
    if (t.needs_grad(a)) detail::accumulate(t, a, g, mode == detail::Broadcast::kLeftScalar);
    if (t.needs_grad(b)) detail::accumulate(t, b, g, mode == detail::Broadcast::kRightScalar);
  });
}

inline Var sub(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  auto mode = detail::binary_broadcast("sub", av, bv);
  Tensor out = detail::zip(av, bv, mode, [](double x, double y) { return x - y; });
  return a.tape->record("sub", std::move(out), {a, b}, [a, b, mode](Tape& t, const Tensor& g) {
    if (t.needs_grad(a)) detail::accumulate(t, a, g, mode == detail::Broadcast::kLeftScalar);
    if (t.needs_grad(b)) {
      Tensor neg = g;
      for (auto& x : neg.values()) x = -x;
      detail::accumulate(t, b, neg, mode == detail::Broadcast::kRightScalar);
    }
  });
}

// Hadamard product.
inline Var mul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  auto mode = detail::binary_broadcast("mul", av, bv);
  Tensor out = detail::zip(av, bv, mode, [](double x, double y) { return x * y; });
  return a.tape->record("mul", std::move(out), {a, b}, [a, b, mode](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    const bool a_scalar = mode == detail::Broadcast::kLeftScalar;
    const bool b_scalar = mode == detail::Broadcast::kRightScalar;
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        ga[a_scalar ? 0 : i] += g[i] * bv[b_scalar ? 0 : i];
    }
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i)
        gb[b_scalar ? 0 : i] += g[i] * av[a_scalar ? 0 : i];
    }
  });
}

inline Var scale(Var x, double c) {
  Tensor out = x.value();
  for (auto& v : out.values()) v *= c;
  return x.tape->record("scale", std::move(out), {x}, [x, c](Tape& t, const Tensor& g) {
    detail::axpy(c, g.data(), t.grad(x).data());
  });
}

inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.tape->record("sum", Tensor::scalar(s), {x}, [x](Tape& t, const Tensor& g) {
    for (auto& v : t.grad(x).values()) v += g[0];
  });
}

inline Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require(av.rank() == 2 && bv.rank() == 2 && av.shape()[1] == bv.shape()[0], [&] { return detail::shapes("matmul", av, bv); });
  const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  }
  return a.tape->record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad(a);  // g * b^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += s;
        }
    }
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad(b);  // a^T * g
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

// [m x k] * [k] -> [m]
inline Var matvec(Var m, Var v) {
  const Tensor& mv = m.value();
  const Tensor& vv = v.value();
  detail::require(mv.rank() == 2 && vv.rank() == 1 && mv.shape()[1] == vv.size(), [&] { return detail::shapes("matvec", mv, vv); });
  const std::size_t rows = mv.shape()[0], cols = mv.shape()[1];
  Tensor out(Shape{rows});
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += mv[i * cols + j] * vv[j];
    out[i] = s;
  }
  return m.tape->record("matvec", std::move(out), {m, v}, [m, v, rows, cols](Tape& t, const Tensor& g) {
    const Tensor& mv = t.value(m);
    const Tensor& vv = t.value(v);
    if (t.needs_grad(m)) {
      Tensor& gm = t.grad(m);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) gm[i * cols + j] += g[i] * vv[j];
    }
    if (t.needs_grad(v)) {
      Tensor& gv = t.grad(v);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) gv[j] += g[i] * mv[i * cols + j];
    }
  });
}

// W * x + b for x of shape [in], or row-wise for x of shape [n x in].
// W is [out x in], b is [out].
inline Var affine(Var x, Var w, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  detail::require(wv.rank() == 2 && bv.rank() == 1 && bv.size() == wv.shape()[0], [&] { return detail::shapes("affine", wv, bv); });
  detail::require((xv.rank() == 1 || xv.rank() == 2) && xv.cols() == wv.shape()[1], [&] { return detail::shapes("affine", xv, wv); });
  const std::size_t n = xv.rows(), in = wv.shape()[1], out_w = wv.shape()[0];
  Tensor out(xv.rank() == 1 ? Shape{out_w} : Shape{n, out_w});
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = xv.data().data() + r * in;
    double* yr = out.data().data() + r * out_w;
    for (std::size_t o = 0; o < out_w; ++o) {
      const double* wr = wv.data().data() + o * in;
      double s = bv[o];
      for (std::size_t i = 0; i < in; ++i) s += wr[i] * xr[i];
      yr[o] = s;
    }
  }
  return x.tape->record("affine", std::move(out), {x, w, b},
                        [x, w, b, n, in, out_w](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    const bool gx_on = t.needs_grad(x), gw_on = t.needs_grad(w), gb_on = t.needs_grad(b);
    Tensor* gx = gx_on ? &t.grad(x) : nullptr;
    Tensor* gw = gw_on ? &t.grad(w) : nullptr;
    Tensor* gb = gb_on ? &t.grad(b) : nullptr;
    for (std::size_t r = 0; r < n; ++r) {
      const double* xr = xv.data().data() + r * in;
      const double* gr = g.data().data() + r * out_w;
      for (std::size_t o = 0; o < out_w; ++o) {
        const double go = gr[o];
        if (go == 0.0) continue;
        if (gb) (*gb)[o] += go;
        if (gw) {
          double* gwr = gw->data().data() + o * in;
          for (std::size_t i = 0; i < in; ++i) gwr[i] += go * xr[i];
        }
        if (gx) {
          const double* wr = wv.data().data() + o * in;
          double* gxr = gx->data().data() + r * in;
          for (std::size_t i = 0; i < in; ++i) gxr[i] += go * wr[i];
        }
      }
    }
  });
}

inline Var relu(Var x) {
  Tensor out = x.value();
  x.tape->note_relu(out.data());
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  // Subgradient 0 at exactly 0.
  return x.tape->record("relu", std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
}

inline Var tanh(Var x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = std::tanh(v);
  return x.tape->record("tanh", out, {x}, [x, out](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - out[i] * out[i]);
  });
}

// Saturates into [kSigmoidFloor, 1 - 2^-53] so outputs stay strictly inside
// (0, 1) for every finite input.
inline constexpr double kSigmoidFloor = 1e-300;
inline constexpr double kSigmoidCeil = 1.0 - 0x1.0p-53;

inline double sigmoid_value(double z) {
  const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  return std::clamp(s, kSigmoidFloor, kSigmoidCeil);
}

inline Var sigmoid(Var x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = sigmoid_value(v);
  return x.tape->record("sigmoid", out, {x}, [x, out](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * out[i] * (1.0 - out[i]);
  });
}

// Concatenation along the last axis of rank-1 tensors, or of rank-2 tensors
// with equal row counts.
inline Var concat(const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "concat: no operands");
  const Tensor& first = parts.front().value();
  const std::size_t rank = first.rank();
  detail::require(rank == 1 || rank == 2, "concat: operands must be rank 1 or 2");
  const std::size_t rows = first.rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    detail::require(v.rank() == rank && v.rows() == rows, [&] { return detail::shapes("concat", first, v); });
    widths.push_back(v.cols());
    total += v.cols();
  }
  Tensor out(rank == 1 ? Shape{total} : Shape{rows, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data().data() + r * widths[k], widths[k],
                  out.data().data() + r * total + offset);
    offset += widths[k];
  }
  Tape* tape = parts.front().tape;
  return tape->record("concat", std::move(out), std::span<const Var>(parts),
                      [parts, widths, rows, total](Tape& t, const Tensor& g) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (t.needs_grad(parts[k])) {
        Tensor& gp = t.grad(parts[k]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c)
            gp[r * widths[k] + c] += g[r * total + offset + c];
      }
      offset += widths[k];
    }
  });
}

// Elements [offset, offset + len) of a rank-1 tensor.
inline Var slice(Var x, std::size_t offset, std::size_t len) {
  const Tensor& xv = x.value();
  detail::require(xv.rank() == 1 && offset + len <= xv.size(), [&] { return "slice: range [" + std::to_string(offset) + ", " +
                      std::to_string(offset + len) + ") outside " + shape_str(xv.shape()); });
  Tensor out(Shape{len});
  std::copy_n(xv.data().data() + offset, len, out.data().data());
  return x.tape->record("slice", std::move(out), {x}, [x, offset, len](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < len; ++i) gx[offset + i] += g[i];
  });
}

inline Var slice_rows(Var x, std::size_t start, std::size_t count) {
  const Tensor& xv = x.value();
  detail::require(xv.rank() == 2 && start + count <= xv.shape()[0] && count > 0, [&] { return "slice_rows: rows [" + std::to_string(start) + ", " +
                      std::to_string(start + count) + ") outside " + shape_str(xv.shape()); });
  const std::size_t cols = xv.shape()[1];
  Tensor out(Shape{count, cols});
  std::copy_n(xv.data().data() + start * cols, count * cols, out.data().data());
  return x.tape->record("slice_rows", std::move(out), {x},
                        [x, start, count, cols](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < count * cols; ++i) gx[start * cols + i] += g[i];
  });
}

inline Var row(Var x, std::size_t r) {
  const Tensor& xv = x.value();
  detail::require(xv.rank() == 2 && r < xv.shape()[0], [&] { return "row: index " + std::to_string(r) + " outside " + shape_str(xv.shape()); });
  const std::size_t cols = xv.shape()[1];
  Tensor out(Shape{cols});
  std::copy_n(xv.data().data() + r * cols, cols, out.data().data());
  return x.tape->record("row", std::move(out), {x}, [x, r, cols](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad(x);
    for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[c];
  });
}

// Stacks elements [offset, offset + len) of each rank-1 operand as rows.
inline Var stack_rows(const std::vector<Var>& vecs, std::size_t offset, std::size_t len) {
  detail::require(!vecs.empty(), "stack_rows: no operands");
  Tensor out(Shape{vecs.size(), len});
  for (std::size_t r = 0; r < vecs.size(); ++r) {
    const Tensor& v = vecs[r].value();
    detail::require(v.rank() == 1 && offset + len <= v.size(), [&] { return "stack_rows: operand " + shape_str(v.shape()) + " too short"; });
    std::copy_n(v.data().data() + offset, len, out.data().data() + r * len);
  }
  return vecs.front().tape->record("stack_rows", std::move(out), std::span<const Var>(vecs),
                                   [vecs, offset, len](Tape& t, const Tensor& g) {
    for (std::size_t r = 0; r < vecs.size(); ++r) {
      if (!t.needs_grad(vecs[r])) continue;
      Tensor& gv = t.grad(vecs[r]);
      for (std::size_t c = 0; c < len; ++c) gv[offset + c] += g[r * len + c];
    }
  });
}

inline Var stack_rows(const std::vector<Var>& vecs) {
  detail::require(!vecs.empty(), "stack_rows: no operands");
  return stack_rows(vecs, 0, vecs.front().value().size());
}

// [d] -> [n x d], each row a copy of v.
inline Var repeat_rows(Var v, std::size_t n) {
  const Tensor& vv = v.value();
  detail::require(vv.rank() == 1, "repeat_rows: operand must be rank 1");
  const std::size_t d = vv.size();
  Tensor out(Shape{n, d});
  for (std::size_t r = 0; r < n; ++r) std::copy_n(vv.data().data(), d, out.data().data() + r * d);
  return v.tape->record("repeat_rows", std::move(out), {v}, [v, n, d](Tape& t, const Tensor& g) {
    Tensor& gv = t.grad(v);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) gv[c] += g[r * d + c];
  });
}

// Mean over axis 0: [n x d] -> [d].
inline Var mean_rows(Var x) {
  const Tensor& xv = x.value();
  detail::require(xv.rank() == 2 && xv.shape()[0] > 0, "mean_rows: operand must be [n x d], n > 0");
  const std::size_t n = xv.shape()[0], d = xv.shape()[1];
  Tensor out(Shape{d});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[c] += xv[r * d + c];
  for (auto& v : out.values()) v /= static_cast<double>(n);
  return x.tape->record("mean_rows", std::move(out), {x}, [x, n, d](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad(x);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += g[c] * inv;
  });
}

// Rows of `table` selected by ids: [R x D] -> [len x D]. Backward scatters
// into the selected rows only.
inline Var gather_rows(Var table, std::vector<std::size_t> ids, std::string_view table_name = "table") {
  const Tensor& tv = table.value();
  detail::require(tv.rank() == 2, "gather_rows: table must be rank 2");
  const std::size_t rows = tv.shape()[0], dim = tv.shape()[1];
  for (std::size_t id : ids) {
    if (id >= rows) {
      throw IndexError("gather_rows: index " + std::to_string(id) + " out of range for " +
                       std::string(table_name) + " with " + std::to_string(rows) + " rows");
    }
  }
  Tensor out(Shape{ids.size(), dim});
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(tv.data().data() + ids[i] * dim, dim, out.data().data() + i * dim);
  return table.tape->record("gather_rows", std::move(out), {table},
                            [table, ids = std::move(ids), dim](Tape& t, const Tensor& g) {
    Tensor& gt = t.grad(table);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t c = 0; c < dim; ++c) gt[ids[i] * dim + c] += g[i * dim + c];
  });
}

inline Var lookup_row(Var table, std::size_t id, std::string_view table_name = "table") {
  const Tensor& tv = table.value();
  detail::require(tv.rank() == 2, "lookup_row: table must be rank 2");
  const std::size_t rows = tv.shape()[0], dim = tv.shape()[1];
  if (id >= rows) {
    throw IndexError("lookup_row: index " + std::to_string(id) + " out of range for " +
                     std::string(table_name) + " with " + std::to_string(rows) + " rows");
  }
  Tensor out(Shape{dim});
  std::copy_n(tv.data().data() + id * dim, dim, out.data().data());
  return table.tape->record("lookup_row", std::move(out), {table}, [table, id, dim](Tape& t, const Tensor& g) {
    Tensor& gt = t.grad(table);
    for (std::size_t c = 0; c < dim; ++c) gt[id * dim + c] += g[c];
  });
}

struct RowSpan {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
};

// Mean over spans of the mean of each span's rows: [n x d] -> [d].
inline Var span_average(Var x, std::vector<RowSpan> spans) {
  const Tensor& xv = x.value();
  detail::require(xv.rank() == 2, "span_average: operand must be rank 2");
  if (spans.empty()) throw DimensionError("span_average: empty span list");
  const std::size_t n = xv.shape()[0], d = xv.shape()[1];
  std::vector<double> row_weight(n, 0.0);
  for (const RowSpan& s : spans) {
    if (s.start >= s.end || s.end > n) {
      throw IndexError("span_average: span [" + std::to_string(s.start) + ", " +
                       std::to_string(s.end) + ") invalid for " + std::to_string(n) + " rows");
    }
    const double w = 1.0 / (static_cast<double>(spans.size()) * static_cast<double>(s.end - s.start));
    for (std::size_t r = s.start; r < s.end; ++r) row_weight[r] += w;
  }
  Tensor out(Shape{d});
  for (const RowSpan& s : spans) {
    Tensor mention(Shape{d});
    for (std::size_t r = s.start; r < s.end; ++r)
      for (std::size_t c = 0; c < d; ++c) mention[c] += xv[r * d + c];
    const double inv = 1.0 / static_cast<double>(s.end - s.start);
    for (std::size_t c = 0; c < d; ++c) out[c] += mention[c] * inv;
  }
  for (auto& v : out.values()) v /= static_cast<double>(spans.size());
  return x.tape->record("span_average", std::move(out), {x},
                        [x, row_weight = std::move(row_weight), d](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad(x);
    for (std::size_t r = 0; r < row_weight.size(); ++r) {
      if (row_weight[r] == 0.0) continue;
      for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += row_weight[r] * g[c];
    }
  });
}

// Softmax over valid positions; invalid positions receive weight exactly 0.
inline Tensor masked_softmax_values(const Tensor& scores, const std::vector<bool>& mask) {
  if (scores.rank() != 1 || mask.size() != scores.size()) {
    throw DimensionError("masked_softmax: scores " + shape_str(scores.shape()) + " vs mask length " +
                         std::to_string(mask.size()));
  }
  double best = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (mask[i]) {
      best = std::max(best, scores[i]);
      any = true;
    }
  }
  if (!any) throw DegenerateMaskError("masked_softmax: every position is masked");
  Tensor out(scores.shape());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (mask[i]) {
      out[i] = std::exp(scores[i] - best);
      z += out[i];
    }
  }
  for (auto& v : out.values()) v /= z;
  return out;
}

inline Var masked_softmax(Var scores, std::vector<bool> mask) {
  Tensor out = masked_softmax_values(scores.value(), mask);
  return scores.tape->record("masked_softmax", out, {scores},
                             [scores, out, mask = std::move(mask)](Tape& t, const Tensor& g) {
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += out[i] * g[i];
    Tensor& gs = t.grad(scores);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (mask[i]) gs[i] += out[i] * (g[i] - dot);
  });
}

// sum_t w[t] * x[t, :]
inline Var weighted_sum(Var w, Var x) {
  const Tensor& wv = w.value();
  const Tensor& xv = x.value();
  detail::require(wv.rank() == 1 && xv.rank() == 2 && wv.size() == xv.shape()[0], [&] { return detail::shapes("weighted_sum", wv, xv); });
  const std::size_t n = xv.shape()[0], d = xv.shape()[1];
  Tensor out(Shape{d});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[c] += wv[r] * xv[r * d + c];
  return w.tape->record("weighted_sum", std::move(out), {w, x}, [w, x, n, d](Tape& t, const Tensor& g) {
    const Tensor& wv = t.value(w);
    const Tensor& xv = t.value(x);
    if (t.needs_grad(w)) {
      Tensor& gw = t.grad(w);
      for (std::size_t r = 0; r < n; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += g[c] * xv[r * d + c];
        gw[r] += s;
      }
    }
    if (t.needs_grad(x)) {
      Tensor& gx = t.grad(x);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += wv[r] * g[c];
    }
  });
}

// out[i] = sum_j sum_k a[j] * r[j, k, i] * b[k]; r has shape [d x d x d].
inline Var bilinear(Var a, Var r, Var b) {
  const Tensor& av = a.value();
  const Tensor& rv = r.value();
  const Tensor& bv = b.value();
  const std::size_t d = av.size();
  detail::require(av.rank() == 1 && bv.rank() == 1 && bv.size() == d &&
                      rv.shape() == Shape{d, d, d}, [&] { return "bilinear: operands " + shape_str(av.shape()) + ", " + shape_str(rv.shape()) +
                      ", " + shape_str(bv.shape()) + " disagree"; });
  Tensor out(Shape{d});
  for (std::size_t j = 0; j < d; ++j) {
    if (av[j] == 0.0) continue;
    for (std::size_t k = 0; k < d; ++k) {
      const double ab = av[j] * bv[k];
      const double* rjk = rv.data().data() + (j * d + k) * d;
      for (std::size_t i = 0; i < d; ++i) out[i] += ab * rjk[i];
    }
  }
  return a.tape->record("bilinear", std::move(out), {a, r, b}, [a, r, b, d](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    const Tensor& rv = t.value(r);
    const Tensor& bv = t.value(b);
    Tensor* ga = t.needs_grad(a) ? &t.grad(a) : nullptr;
    Tensor* gr = t.needs_grad(r) ? &t.grad(r) : nullptr;
    Tensor* gb = t.needs_grad(b) ? &t.grad(b) : nullptr;
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = 0; k < d; ++k) {
        const double* rjk = rv.data().data() + (j * d + k) * d;
        double rg = 0.0;  // sum_i r[j,k,i] g[i]
        for (std::size_t i = 0; i < d; ++i) rg += rjk[i] * g[i];
        if (ga) (*ga)[j] += rg * bv[k];
        if (gb) (*gb)[k] += rg * av[j];
        if (gr) {
          const double ab = av[j] * bv[k];
          double* grjk = gr->data().data() + (j * d + k) * d;
          for (std::size_t i = 0; i < d; ++i) grjk[i] += ab * g[i];
        }
      }
  });
}

// One LSTM step. `gates_in` holds precomputed input projections (bias
// included) with one row of width 4h per position; row `t` is used. The
// state operand is the previous output [h ; c] of width 2h, or nullopt for a
// zero initial state. Gate order is (input, forget, cell, output).
// Returns [h ; c].
inline Var lstm_step(Var gates_in, std::size_t t_row, std::optional<Var> state, Var w_hh) {
  const Tensor& gv = gates_in.value();
  const Tensor& wv = w_hh.value();
  detail::require(wv.rank() == 2 && wv.shape()[0] == 4 * wv.shape()[1], [&] { return "lstm_step: recurrent weights must be [4h x h], got " + shape_str(wv.shape()); });
  const std::size_t h = wv.shape()[1];
  detail::require(gv.rank() == 2 && gv.shape()[1] == 4 * h && t_row < gv.shape()[0], [&] { return "lstm_step: gate inputs " + shape_str(gv.shape()) + " incompatible with h=" +
                      std::to_string(h); });
  std::vector<double> prev(2 * h, 0.0);
  if (state) {
    const Tensor& sv = state->value();
    detail::require(sv.rank() == 1 && sv.size() == 2 * h, [&] { return "lstm_step: state " + shape_str(sv.shape()) + " is not [2h]"; });
    std::copy(sv.values().begin(), sv.values().end(), prev.begin());
  }
  // acts = [i, f, g, o] after nonlinearity
  std::vector<double> acts(4 * h);
  for (std::size_t q = 0; q < 4 * h; ++q) {
    double z = gv[t_row * 4 * h + q];
    const double* wr = wv.data().data() + q * h;
    for (std::size_t j = 0; j < h; ++j) z += wr[j] * prev[j];
    acts[q] = (q >= 2 * h && q < 3 * h) ? std::tanh(z) : sigmoid_value(z);
  }
  Tensor out(Shape{2 * h});
  for (std::size_t j = 0; j < h; ++j) {
    const double c = acts[h + j] * prev[h + j] + acts[j] * acts[2 * h + j];
    out[h + j] = c;
    out[j] = acts[3 * h + j] * std::tanh(c);
  }
  std::vector<Var> inputs{gates_in, w_hh};
  if (state) inputs.push_back(*state);
  const Tensor cell = out;
  return gates_in.tape->record(
      "lstm_step", std::move(out), std::span<const Var>(inputs),
      [gates_in, t_row, state, w_hh, h, prev = std::move(prev), acts = std::move(acts),
       cell](Tape& t, const Tensor& g) {
        std::vector<double> dz(4 * h);
        std::vector<double> dc_prev(h);
        for (std::size_t j = 0; j < h; ++j) {
          const double i = acts[j], f = acts[h + j], gg = acts[2 * h + j], o = acts[3 * h + j];
          const double tc = std::tanh(cell[h + j]);
          const double d_o = g[j] * tc;
          const double dc = g[h + j] + g[j] * o * (1.0 - tc * tc);
          dz[j] = dc * gg * i * (1.0 - i);
          dz[h + j] = dc * prev[h + j] * f * (1.0 - f);
          dz[2 * h + j] = dc * i * (1.0 - gg * gg);
          dz[3 * h + j] = d_o * o * (1.0 - o);
          dc_prev[j] = dc * f;
        }
        if (t.needs_grad(gates_in)) {
          Tensor& gg = t.grad(gates_in);
          for (std::size_t q = 0; q < 4 * h; ++q) gg[t_row * 4 * h + q] += dz[q];
        }
        if (t.needs_grad(w_hh)) {
          Tensor& gw = t.grad(w_hh);
          for (std::size_t q = 0; q < 4 * h; ++q)
            for (std::size_t j = 0; j < h; ++j) gw[q * h + j] += dz[q] * prev[j];
        }
        if (state && t.needs_grad(*state)) {
          const Tensor& wv = t.value(w_hh);
          Tensor& gs = t.grad(*state);
          for (std::size_t q = 0; q < 4 * h; ++q)
            for (std::size_t j = 0; j < h; ++j) gs[j] += dz[q] * wv[q * h + j];
          for (std::size_t j = 0; j < h; ++j) gs[h + j] += dc_prev[j];
        }
      });
}

// Inverted dropout. In training mode each element is zeroed with
// probability p and survivors are scaled by 1 / (1 - p); otherwise identity
// (the operand itself is returned).
inline Var dropout(Var x, double p, bool training, SeedStream* rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout: probability " + std::to_string(p) + " outside [0, 1)");
  }
  if (!training || p == 0.0) return x;
  if (rng == nullptr) throw ConfigError("dropout: training mode requires a seed stream");
  const Tensor& xv = x.value();
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(xv.size());
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = rng->bernoulli(p) ? 0.0 : keep_scale;
    out[i] = xv[i] * mask[i];
  }
  return x.tape->record("dropout", std::move(out), {x}, [x, mask = std::move(mask)](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

inline constexpr double kLogClamp = 1e-12;

// -sum_r y_r log p_r + (1 - y_r) log(1 - p_r), log arguments clamped at 1e-12.
inline double bce_value(std::span<const double> probs, std::span<const double> labels) {
  if (probs.size() != labels.size()) {
    throw DimensionError("bce: " + std::to_string(probs.size()) + " probabilities vs " +
                         std::to_string(labels.size()) + " labels");
  }
  double loss = 0.0;
  for (std::size_t r = 0; r < probs.size(); ++r) {
    loss -= labels[r] * std::log(std::max(probs[r], kLogClamp)) +
            (1.0 - labels[r]) * std::log(std::max(1.0 - probs[r], kLogClamp));
  }
  return loss;
}

inline Var bce(Var probs, std::vector<double> labels) {
  const Tensor& pv = probs.value();
  detail::require(pv.rank() == 1, "bce: probabilities must be rank 1");
  const double loss = bce_value(pv.data(), labels);
  return probs.tape->record("bce", Tensor::scalar(loss), {probs},
                            [probs, labels = std::move(labels)](Tape& t, const Tensor& g) {
    const Tensor& pv = t.value(probs);
    Tensor& gp = t.grad(probs);
    for (std::size_t r = 0; r < labels.size(); ++r) {
      const double p = pv[r];
      double d = 0.0;
      if (p > kLogClamp) d -= labels[r] / p;
      if (1.0 - p > kLogClamp) d += (1.0 - labels[r]) / (1.0 - p);
      gp[r] += g[0] * d;
    }
  });
}

}  // namespace hin::ad
