#pragma once

// Tape-based reverse-mode differentiation over rank-2 tensors.
//
// Every primitive records its output on a Tape together with a closure that
// maps the output gradient onto its inputs. Tape::backward replays the
// closures in exact reverse execution order; gradients of values used more
// than once are summed.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "doramos/error.hpp"
#include "doramos/params.hpp"
#include "doramos/rng.hpp"
#include "doramos/tensor.hpp"

namespace doramos {

class Tape;

// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  // With check_finite set, every recorded value is scanned and a
  // NumericalError names the first primitive producing NaN/Inf.
  explicit Tape(bool check_finite = false) : check_finite_(check_finite) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push("constant", std::move(value), false, {}); }

  // Registers a trainable leaf. Registering the same name twice returns the
  // existing leaf.
  Var param(const std::string& name, const Tensor& value) {
    if (auto it = param_ids_.find(name); it != param_ids_.end()) return {this, it->second};
    Var v = push("param", value, true, {});
    param_ids_.emplace(name, v.id);
    return v;
  }

  Var param(const ParamStore& store, const std::string& name) { return param(name, store.at(name)); }

  bool has_param(const std::string& name) const { return param_ids_.contains(name); }

  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, Backward fn) {
    bool needs = false;
    for (const Var& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    return push(op, std::move(value), needs, needs ? std::move(fn) : Backward{});
  }

  Var record(const char* op, Tensor value, const std::vector<Var>& inputs, Backward fn) {
    bool needs = false;
    for (const Var& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    return push(op, std::move(value), needs, needs ? std::move(fn) : Backward{});
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Mutable gradient slot, allocated as zeros on first touch.
  Tensor& grad_slot(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape(), 0.0);
    return n.grad;
  }

  // Gradient of the last backward() w.r.t. a node (zeros if unreached).
  Tensor grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.size() != n.value.size()) return Tensor(n.value.shape(), 0.0);
    return n.grad;
  }

  void backward(Var loss) {
    if (loss.tape != this) throw UsageError("backward: variable belongs to another tape");
    if (nodes_[loss.id].value.size() != 1) {
      throw ShapeError("backward: loss must be a scalar, got " + shape_str(nodes_[loss.id].value.shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor();
    grad_slot(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() == n.value.size()) n.backward(*this, i);
    }
  }

  // Runs backward from `loss` and returns the gradient for each named
  // parameter. Parameters registered on this tape but not reached by the
  // loss get zeros; names never registered are reported as detached.
  ParamStore gradients(Var loss, const std::vector<std::string>& names) {
    backward(loss);
    ParamStore out;
    for (const auto& name : names) {
      auto it = param_ids_.find(name);
      if (it == param_ids_.end()) throw UsageError("detached parameter (not on tape): " + name);
      out.add(name, grad(Var{this, it->second}));
    }
    return out;
  }

  ParamStore gradients(Var loss, const ParamStore& params) { return gradients(loss, params.names()); }

  std::size_t size() const { return nodes_.size(); }

  // Debug view of the recorded primitive names, in execution order.
  std::vector<std::string> ops() const {
    std::vector<std::string> out;
    out.reserve(nodes_.size());
    for (const Node& n : nodes_) out.emplace_back(n.op);
    return out;
  }

 private:
  struct Node {
    const char* op;
    Tensor value;
    Tensor grad;
    bool requires_grad;
    Backward backward;
  };

  Var push(const char* op, Tensor value, bool requires_grad, Backward fn) {
    if (check_finite_ && !value.all_finite()) {
      throw NumericalError(std::string("non-finite output from primitive '") + op + "'");
    }
    nodes_.push_back(Node{op, std::move(value), Tensor(), requires_grad, std::move(fn)});
    return Var{this, nodes_.size() - 1};
  }

  bool check_finite_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_ids_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace ad {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline ConstMap view(const Tensor& t) { return ConstMap(t.data().data(), t.rows(), t.cols()); }
inline MutMap view(Tensor& t) { return MutMap(t.data().data(), t.rows(), t.cols()); }

inline void require_same_tape(const Var& a, const Var& b) {
  if (a.tape != b.tape) throw UsageError("operands recorded on different tapes");
}

inline void require_rank2(const Var& v, const char* op) {
  if (v.value().rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 operand, got " + shape_str(v.shape()));
  }
}

// Applies f elementwise; df(x, y) gives dy/dx from the input and output.
template <typename F, typename DF>
Var unary(const char* op, Var a, F f, DF df) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ai = a.id;
  return a.tape->record(op, std::move(y), {a}, [ai, df](Tape& t, std::size_t self) {
    const Tensor& x = t.value(ai);
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad_slot(self);
    Tensor& dx = t.grad_slot(ai);
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g[i] * df(x[i], y[i]);
  });
}

enum class Broadcast { Same, Row };

inline Broadcast broadcast_kind(const Var& a, const Var& b, const char* op) {
  require_rank2(a, op);
  require_rank2(b, op);
  if (a.shape() == b.shape()) return Broadcast::Same;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::Row;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor c = Tensor::matrix(a.rows(), b.cols());
  detail::view(c).noalias() = detail::view(a.value()) * detail::view(b.value());
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record("matmul", std::move(c), {a, b}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_slot(self);
    if (t.requires_grad(ai)) {
      detail::view(t.grad_slot(ai)).noalias() += detail::view(g) * detail::view(t.value(bi)).transpose();
    }
    if (t.requires_grad(bi)) {
      detail::view(t.grad_slot(bi)).noalias() += detail::view(t.value(ai)).transpose() * detail::view(g);
    }
  });
}

// a + b where b has a's shape or is a [1, cols] row broadcast over a's rows.
inline Var add(Var a, Var b) {
  detail::require_same_tape(a, b);
  const auto kind = detail::broadcast_kind(a, b, "add");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  const std::size_t cols = y.cols();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += kind == detail::Broadcast::Same ? bv[i] : bv[i % cols];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record("add", std::move(y), {a, b}, [ai, bi, kind, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_slot(self);
    if (t.requires_grad(ai)) {
      Tensor& da = t.grad_slot(ai);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    }
    if (t.requires_grad(bi)) {
      Tensor& db = t.grad_slot(bi);
      for (std::size_t i = 0; i < g.size(); ++i) db[kind == detail::Broadcast::Same ? i : i % cols] += g[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_tape(a, b);
  const auto kind = detail::broadcast_kind(a, b, "sub");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  const std::size_t cols = y.cols();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= kind == detail::Broadcast::Same ? bv[i] : bv[i % cols];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record("sub", std::move(y), {a, b}, [ai, bi, kind, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_slot(self);
    if (t.requires_grad(ai)) {
      Tensor& da = t.grad_slot(ai);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    }
    if (t.requires_grad(bi)) {
      Tensor& db = t.grad_slot(bi);
      for (std::size_t i = 0; i < g.size(); ++i) db[kind == detail::Broadcast::Same ? i : i % cols] -= g[i];
    }
  });
}

// Elementwise product, same shape or row broadcast of b.
inline Var mul(Var a, Var b) {
  detail::require_same_tape(a, b);
  const auto kind = detail::broadcast_kind(a, b, "mul");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  const std::size_t cols = y.cols();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= kind == detail::Broadcast::Same ? bv[i] : bv[i % cols];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record("mul", std::move(y), {a, b}, [ai, bi, kind, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_slot(self);
    const Tensor& av = t.value(ai);
    const Tensor& bv = t.value(bi);
    auto bidx = [&](std::size_t i) { return kind == detail::Broadcast::Same ? i : i % cols; };
    if (t.requires_grad(ai)) {
      Tensor& da = t.grad_slot(ai);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[bidx(i)];
    }
    if (t.requires_grad(bi)) {
      Tensor& db = t.grad_slot(bi);
      for (std::size_t i = 0; i < g.size(); ++i) db[bidx(i)] += g[i] * av[i];
    }
  });
}

inline Var scale(Var a, double c) {
  return detail::unary("scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var add_scalar(Var a, double c) {
  return detail::unary("add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Var relu(Var a) {
  return detail::unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var sigmoid(Var a) {
  return detail::unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(Var a) {
  return detail::unary(
      "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

// log(1 + exp(x)), overflow-safe.
inline Var softplus(Var a) {
  return detail::unary(
      "softplus", a, [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      });
}

// Subgradient 0 at the origin.
inline Var abs(Var a) {
  return detail::unary(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

// Identity forward; blocks every gradient flowing into `a`.
inline Var stop_gradient(Var a) { return a.tape->record("stop_gradient", a.value(), {}, {}); }

namespace detail {

// Iterates the lines of a rank-2 tensor along `axis`: axis 1 walks rows
// (each row is a line), axis 0 walks columns.
struct Lines {
  std::size_t count, length, stride;
  std::size_t start(std::size_t line, std::size_t cols) const { return stride == 1 ? line * cols : line; }
};

inline Lines lines(const Tensor& t, int axis, const char* op) {
  if (t.rank() != 2 || (axis != 0 && axis != 1)) {
    throw ShapeError(std::string(op) + ": invalid axis " + std::to_string(axis) + " for shape " +
                     shape_str(t.shape()));
  }
  if (axis == 1) return {t.rows(), t.cols(), 1};
  return {t.cols(), t.rows(), t.cols()};
}

}  // namespace detail

// Softmax along `axis` with max subtraction.
inline Var softmax(Var a, int axis) {
  const Tensor& x = a.value();
  const auto L = detail::lines(x, axis, "softmax");
  const std::size_t cols = x.cols();
  Tensor y(x.shape());
  for (std::size_t l = 0; l < L.count; ++l) {
    const std::size_t s = L.start(l, cols);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < L.length; ++k) mx = std::max(mx, x[s + k * L.stride]);
    double z = 0.0;
    for (std::size_t k = 0; k < L.length; ++k) z += (y[s + k * L.stride] = std::exp(x[s + k * L.stride] - mx));
    for (std::size_t k = 0; k < L.length; ++k) y[s + k * L.stride] /= z;
  }
  const std::size_t ai = a.id;
  return a.tape->record("softmax", std::move(y), {a}, [ai, L, cols](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad_slot(self);
    Tensor& dx = t.grad_slot(ai);
    for (std::size_t l = 0; l < L.count; ++l) {
      const std::size_t s = L.start(l, cols);
      double dot = 0.0;
      for (std::size_t k = 0; k < L.length; ++k) dot += g[s + k * L.stride] * y[s + k * L.stride];
      for (std::size_t k = 0; k < L.length; ++k) {
        const std::size_t i = s + k * L.stride;
        dx[i] += y[i] * (g[i] - dot);
      }
    }
  });
}

inline Var log_softmax(Var a, int axis) {
  const Tensor& x = a.value();
  const auto L = detail::lines(x, axis, "log_softmax");
  const std::size_t cols = x.cols();
  Tensor y(x.shape());
  for (std::size_t l = 0; l < L.count; ++l) {
    const std::size_t s = L.start(l, cols);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < L.length; ++k) mx = std::max(mx, x[s + k * L.stride]);
    double z = 0.0;
    for (std::size_t k = 0; k < L.length; ++k) z += std::exp(x[s + k * L.stride] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t k = 0; k < L.length; ++k) y[s + k * L.stride] = x[s + k * L.stride] - lse;
  }
  const std::size_t ai = a.id;
  return a.tape->record("log_softmax", std::move(y), {a}, [ai, L, cols](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad_slot(self);
    Tensor& dx = t.grad_slot(ai);
    for (std::size_t l = 0; l < L.count; ++l) {
      const std::size_t s = L.start(l, cols);
      double gsum = 0.0;
      for (std::size_t k = 0; k < L.length; ++k) gsum += g[s + k * L.stride];
      for (std::size_t k = 0; k < L.length; ++k) {
        const std::size_t i = s + k * L.stride;
        dx[i] += g[i] - std::exp(y[i]) * gsum;
      }
    }
  });
}

// Per-row normalization to zero mean and unit variance (no affine part).
inline Var layernorm(Var a, double eps = 1e-12) {
  detail::require_rank2(a, "layernorm");
  const Tensor& x = a.value();
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor y(x.shape());
  std::vector<double> inv_sd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &x.data()[r * cols];
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(cols);
    inv_sd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) y(r, c) = (xr[c] - mean) * inv_sd[r];
  }
  const std::size_t ai = a.id;
  return a.tape->record("layernorm", std::move(y), {a},
                        [ai, inv_sd = std::move(inv_sd), rows, cols](Tape& t, std::size_t self) {
                          const Tensor& y = t.value(self);
                          const Tensor& g = t.grad_slot(self);
                          Tensor& dx = t.grad_slot(ai);
                          const double n = static_cast<double>(cols);
                          for (std::size_t r = 0; r < rows; ++r) {
                            double gmean = 0.0, gymean = 0.0;
                            for (std::size_t c = 0; c < cols; ++c) {
                              gmean += g(r, c);
                              gymean += g(r, c) * y(r, c);
                            }
                            gmean /= n;
                            gymean /= n;
                            for (std::size_t c = 0; c < cols; ++c) {
                              dx(r, c) += inv_sd[r] * (g(r, c) - gmean - y(r, c) * gymean);
                            }
                          }
                        });
}

inline Var transpose(Var a) {
  detail::require_rank2(a, "transpose");
  Tensor y = Tensor::matrix(a.cols(), a.rows());
  detail::view(y) = detail::view(a.value()).transpose();
  const std::size_t ai = a.id;
  return a.tape->record("transpose", std::move(y), {a}, [ai](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_slot(self);
    detail::view(t.grad_slot(ai)) += detail::view(g).transpose();
  });
}

inline Var slice_rows(Var a, std::size_t start, std::size_t count) {
  detail::require_rank2(a, "slice_rows");
  if (start + count > a.rows() || count == 0) {
    throw ShapeError("slice_rows: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") outside " + shape_str(a.shape()));
  }
  const std::size_t cols = a.cols();
  const auto& src = a.value().data();
  Tensor y({count, cols},
           std::vector<double>(src.begin() + static_cast<std::ptrdiff_t>(start * cols),
                               src.begin() + static_cast<std::ptrdiff_t>((start + count) * cols)));
  const std::size_t ai = a.id;
  return a.tape->record("slice_rows", std::move(y), {a}, [ai, start, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_slot(self);
    Tensor& dx = t.grad_slot(ai);
    for (std::size_t i = 0; i < g.size(); ++i) dx[start * cols + i] += g[i];
  });
}

inline Var slice_cols(Var a, std::size_t start, std::size_t count) {
  detail::require_rank2(a, "slice_cols");
  if (start + count > a.cols() || count == 0) {
    throw ShapeError("slice_cols: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") outside " + shape_str(a.shape()));
  }
  Tensor y = Tensor::matrix(a.rows(), count);
  detail::view(y) = detail::view(a.value()).middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count));
  const std::size_t ai = a.id;
  return a.tape->record("slice_cols", std::move(y), {a}, [ai, start, count](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_slot(self);
    detail::view(t.grad_slot(ai)).middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) +=
        detail::view(g);
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    detail::require_rank2(p, "concat_cols");
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Tensor y = Tensor::matrix(rows, cols);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    detail::view(y).middleCols(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(p.cols())) =
        detail::view(p.value());
    ids.push_back(p.id);
    offsets.push_back(off);
    off += p.cols();
  }
  return parts.front().tape->record(
      "concat_cols", std::move(y), parts, [ids, offsets](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_slot(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.requires_grad(ids[k])) continue;
          Tensor& dx = t.grad_slot(ids[k]);
          detail::view(dx) += detail::view(g).middleCols(static_cast<Eigen::Index>(offsets[k]),
                                                         static_cast<Eigen::Index>(dx.cols()));
        }
      });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  const std::size_t cols = parts.front().cols();
  std::vector<double> data;
  std::vector<std::size_t> ids, offsets;
  std::size_t rows = 0;
  for (const Var& p : parts) {
    detail::require_rank2(p, "concat_rows");
    if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    ids.push_back(p.id);
    offsets.push_back(data.size());
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    rows += p.rows();
  }
  return parts.front().tape->record(
      "concat_rows", Tensor({rows, cols}, std::move(data)), parts, [ids, offsets](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_slot(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.requires_grad(ids[k])) continue;
          Tensor& dx = t.grad_slot(ids[k]);
          for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[offsets[k] + i];
        }
      });
}

// Mean along `axis`: axis 0 averages rows into [1, cols], axis 1 averages
// columns into [rows, 1].
inline Var mean(Var a, int axis) {
  const Tensor& x = a.value();
  const auto L = detail::lines(x, axis, "mean");
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor y = axis == 0 ? Tensor::matrix(1, cols) : Tensor::matrix(rows, 1);
  if (axis == 0) {
    detail::view(y) = detail::view(x).colwise().mean();
  } else {
    detail::view(y) = detail::view(x).rowwise().mean();
  }
  const std::size_t ai = a.id;
  const double inv = 1.0 / static_cast<double>(L.length);
  return a.tape->record("mean", std::move(y), {a}, [ai, axis, rows, cols, inv](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_slot(self);
    Tensor& dx = t.grad_slot(ai);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) dx(r, c) += inv * (axis == 0 ? g[c] : g[r]);
    }
  });
}

// Sum of all elements as a [1, 1] scalar.
inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ai = a.id;
  return a.tape->record("sum", Tensor::scalar(s), {a}, [ai](Tape& t, std::size_t self) {
    const double g = t.grad_slot(self)[0];
    Tensor& dx = t.grad_slot(ai);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
  });
}

// Inverted dropout. rate 0 records nothing and returns `a`.
inline Var dropout(Var a, double rate, Rng& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw UsageError("dropout rate must be < 1");
  const Tensor& x = a.value();
  Tensor mask(x.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < rate ? 0.0 : 1.0 / (1.0 - rate);
  Var m = a.tape->constant(std::move(mask));
  return mul(a, m);
}

}  // namespace ad
}  // namespace doramos
