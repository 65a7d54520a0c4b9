#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "piecer/errors.hpp"
#include "piecer/rng.hpp"
#include "piecer/tensor.hpp"

namespace piecer {

enum class OpKind {
  kParameter,
  kConstant,
  kMatmul,
  kAdd,
  kSub,
  kHadamard,
  kScalarMix,
  kConcatCols,
  kSigmoid,
  kLeakyRelu,
  kRelu,
  kSoftmaxMasked,
  kMeanRows,
  kSum,
  kDropout,
  kTranspose,
  kSliceCols,
  kGatherRows,
  kAssignRows,
  kLayerNorm,
  kNegLogMarginal,
};

inline std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kParameter: return "parameter";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kHadamard: return "hadamard";
    case OpKind::kScalarMix: return "scalar-mix";
    case OpKind::kConcatCols: return "concat-last-axis";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kLeakyRelu: return "leaky-relu";
    case OpKind::kRelu: return "relu";
    case OpKind::kSoftmaxMasked: return "softmax-over-neighbors";
    case OpKind::kMeanRows: return "mean-rows";
    case OpKind::kSum: return "sum";
    case OpKind::kDropout: return "dropout";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kSliceCols: return "slice-cols";
    case OpKind::kGatherRows: return "gather-rows";
    case OpKind::kAssignRows: return "assign-rows";
    case OpKind::kLayerNorm: return "layer-norm";
    case OpKind::kNegLogMarginal: return "neg-log-marginal";
  }
  return "unknown";
}

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode compute graph.
///
/// Nodes are appended in evaluation order, so list order is a topological
/// order. backward() walks the list once in reverse and then consumes the
/// tape: values stay readable, but no further nodes or passes are allowed.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf bound to a trainable parameter. Repeated calls return the same node.
  Var param(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
    Var v = push(OpKind::kParameter, {}, p.value, true, nullptr);
    nodes_[v.id()].param = &p;
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  Var constant(Tensor t) { return push(OpKind::kConstant, {}, std::move(t), false, nullptr); }

  /// Leaf that receives a gradient but is not bound to a Parameter.
  Var variable(Tensor t) { return push(OpKind::kConstant, {}, std::move(t), true, nullptr); }

  Var record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn fn) {
    if (consumed_) throw ContractError(std::string(op_name(kind)) + ": tape already consumed by backward");
    if (!value.all_finite()) {
      throw NonFiniteError(std::string(op_name(kind)) + ": produced non-finite values");
    }
    bool needs = false;
    for (std::size_t in : inputs) needs = needs || nodes_[in].requires_grad;
    return push(kind, std::move(inputs), std::move(value), needs, needs ? std::move(fn) : nullptr);
  }

  /// Accumulates d(loss)/d(node) for every node and adds parameter gradients
  /// into Parameter::grad.
  void backward(Var loss) {
    if (consumed_) throw ContractError("backward: tape already consumed");
    if (&loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
    const Tensor& lv = nodes_[loss.id()].value;
    if (lv.size() != 1) throw ContractError("backward: loss must be a scalar, got " + shape_str(lv.shape()));
    for (auto& n : nodes_) {
      if (n.requires_grad) n.grad = Tensor(n.value.shape());
    }
    if (!nodes_[loss.id()].requires_grad) {
      consumed_ = true;
      return;
    }
    nodes_[loss.id()].grad[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.backward) n.backward(*this, i);
    }
    for (auto& n : nodes_) {
      if (n.param != nullptr) {
        auto& dst = n.param->grad;
        if (dst.shape() != n.value.shape()) dst = Tensor(n.value.shape());
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
      }
      n.backward = nullptr;
    }
    consumed_ = true;
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  Tensor& grad_mut(std::size_t id) { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  OpKind kind(std::size_t id) const { return nodes_[id].kind; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Var push(OpKind kind, std::vector<std::size_t> inputs, Tensor value, bool rg, BackwardFn fn) {
    if (consumed_) throw ContractError(std::string(op_name(kind)) + ": tape already consumed by backward");
    nodes_.push_back(Node{kind, std::move(inputs), std::move(value), Tensor(), rg, std::move(fn), nullptr});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool consumed_ = false;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline ConstMap cmap(const Tensor& t) { return ConstMap(t.values().data(), t.rows(), t.cols()); }
inline MutMap mmap(Tensor& t) { return MutMap(t.values().data(), t.rows(), t.cols()); }

[[noreturn]] inline void shape_mismatch(OpKind kind, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op_name(kind)) + ": incompatible shapes " + shape_str(a) + " and " +
                       shape_str(b));
}

inline void same_tape(const Var& a, const Var& b, OpKind kind) {
  if (&a.tape() != &b.tape()) throw ContractError(std::string(op_name(kind)) + ": operands on different tapes");
}

inline std::size_t broadcast_dim(std::size_t a, std::size_t b, OpKind kind, const Shape& sa, const Shape& sb) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  shape_mismatch(kind, sa, sb);
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Elementwise binary op with 2-D broadcasting (each dimension equal or 1).
template <typename Fwd, typename DA, typename DB>
Var broadcast_binary(OpKind kind, const Var& a, const Var& b, Fwd fwd, DA da, DB db) {
  same_tape(a, b, kind);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  x.require_matrix(op_name(kind).data());
  y.require_matrix(op_name(kind).data());
  const std::size_t xr = x.rows(), xc = x.cols(), yr = y.rows(), yc = y.cols();
  const std::size_t r = broadcast_dim(xr, yr, kind, x.shape(), y.shape());
  const std::size_t c = broadcast_dim(xc, yc, kind, x.shape(), y.shape());
  Tensor out = Tensor::matrix(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t xi = xr == 1 ? 0 : i, yi = yr == 1 ? 0 : i;
    for (std::size_t j = 0; j < c; ++j) {
      out(i, j) = fwd(x(xi, xc == 1 ? 0 : j), y(yi, yc == 1 ? 0 : j));
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(kind, {ia, ib}, std::move(out), [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(ia);
    const Tensor& yv = t.value(ib);
    const bool ga = t.requires_grad(ia), gb = t.requires_grad(ib);
    for (std::size_t i = 0; i < r; ++i) {
      const std::size_t xi = xr == 1 ? 0 : i, yi = yr == 1 ? 0 : i;
      for (std::size_t j = 0; j < c; ++j) {
        const std::size_t xj = xc == 1 ? 0 : j, yj = yc == 1 ? 0 : j;
        const double gij = g(i, j);
        if (ga) t.grad_mut(ia)(xi, xj) += da(gij, xv(xi, xj), yv(yi, yj));
        if (gb) t.grad_mut(ib)(yi, yj) += db(gij, xv(xi, xj), yv(yi, yj));
      }
    }
  });
}

template <typename Fwd, typename Deriv>
Var unary(OpKind kind, const Var& a, Fwd fwd, Deriv deriv) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = fwd(x[k]);
  const std::size_t ia = a.id();
  return a.tape().record(kind, {ia}, std::move(out), [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(ia);
    const Tensor& yv = t.value(self);
    Tensor& dx = t.grad_mut(ia);
    for (std::size_t k = 0; k < g.size(); ++k) dx[k] += g[k] * deriv(xv[k], yv[k]);
  });
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  detail::same_tape(a, b, OpKind::kMatmul);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  x.require_matrix("matmul");
  y.require_matrix("matmul");
  if (x.cols() != y.rows()) detail::shape_mismatch(OpKind::kMatmul, x.shape(), y.shape());
  Tensor out = Tensor::matrix(x.rows(), y.cols());
  detail::mmap(out).noalias() = detail::cmap(x) * detail::cmap(y);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(OpKind::kMatmul, {ia, ib}, std::move(out), [ia, ib](Tape& t, std::size_t self) {
    auto g = detail::cmap(t.grad(self));
    if (t.requires_grad(ia)) detail::mmap(t.grad_mut(ia)).noalias() += g * detail::cmap(t.value(ib)).transpose();
    if (t.requires_grad(ib)) detail::mmap(t.grad_mut(ib)).noalias() += detail::cmap(t.value(ia)).transpose() * g;
  });
}

inline Var add(const Var& a, const Var& b) {
  return detail::broadcast_binary(
      OpKind::kAdd, a, b, [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

inline Var sub(const Var& a, const Var& b) {
  return detail::broadcast_binary(
      OpKind::kSub, a, b, [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

inline Var hadamard(const Var& a, const Var& b) {
  return detail::broadcast_binary(
      OpKind::kHadamard, a, b, [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; }, [](double g, double x, double) { return g * x; });
}

/// alpha * a + beta, elementwise.
inline Var scalar_mix(const Var& a, double alpha, double beta) {
  return detail::unary(
      OpKind::kScalarMix, a, [=](double x) { return alpha * x + beta; },
      [=](double, double) { return alpha; });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(OpKind::kSigmoid, a, detail::stable_sigmoid,
                       [](double, double y) { return y * (1.0 - y); });
}

inline Var relu(const Var& a) {
  return detail::unary(
      OpKind::kRelu, a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline Var leaky_relu(const Var& a, double slope = 0.2) {
  return detail::unary(
      OpKind::kLeakyRelu, a, [=](double x) { return x > 0 ? x : slope * x; },
      [=](double x, double) { return x > 0 ? 1.0 : slope; });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat-last-axis: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  std::vector<std::size_t> ids, widths;
  for (const Var& p : parts) {
    detail::same_tape(parts[0], p, OpKind::kConcatCols);
    if (p.rows() != r) detail::shape_mismatch(OpKind::kConcatCols, parts[0].shape(), p.shape());
    ids.push_back(p.id());
    widths.push_back(p.cols());
    c += p.cols();
  }
  Tensor out = Tensor::matrix(r, c);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) out(i, off + j) = v(i, j);
    off += v.cols();
  }
  return parts[0].tape().record(OpKind::kConcatCols, ids, std::move(out), [ids, widths, r](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::size_t off = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      if (t.requires_grad(ids[p])) {
        Tensor& d = t.grad_mut(ids[p]);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < widths[p]; ++j) d(i, j) += g(i, off + j);
      }
      off += widths[p];
    }
  });
}

inline Var concat_cols(const Var& a, const Var& b) {
  const Var parts[] = {a, b};
  return concat_cols(parts);
}

enum class EmptyRow { kError, kZero };

/// Row-wise softmax restricted to entries where mask is non-zero. Masked
/// entries come out as exactly 0. A row with no unmasked entry is an error,
/// or an all-zero row under EmptyRow::kZero.
inline Var softmax_masked(const Var& logits, const std::vector<std::uint8_t>& mask,
                          EmptyRow empty = EmptyRow::kError) {
  const Tensor& x = logits.value();
  x.require_matrix("softmax-over-neighbors");
  const std::size_t r = x.rows(), c = x.cols();
  if (mask.size() != x.size()) {
    throw DimensionError("softmax-over-neighbors: mask has " + std::to_string(mask.size()) +
                         " entries for logits " + shape_str(x.shape()));
  }
  Tensor out = Tensor::matrix(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j)
      if (mask[i * c + j]) mx = std::max(mx, x(i, j));
    if (mx == -std::numeric_limits<double>::infinity()) {
      if (empty == EmptyRow::kError) {
        throw DegenerateInputError("softmax-over-neighbors: row " + std::to_string(i) + " is fully masked");
      }
      continue;
    }
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (mask[i * c + j]) {
        out(i, j) = std::exp(x(i, j) - mx);
        z += out(i, j);
      }
    }
    for (std::size_t j = 0; j < c; ++j) out(i, j) /= z;
  }
  const std::size_t ia = logits.id();
  return logits.tape().record(OpKind::kSoftmaxMasked, {ia}, std::move(out), [ia, r, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& p = t.value(self);
    Tensor& dx = t.grad_mut(ia);
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += p(i, j) * g(i, j);
      for (std::size_t j = 0; j < c; ++j) dx(i, j) += p(i, j) * (g(i, j) - dot);
    }
  });
}

inline Var softmax_rows(const Var& logits) {
  return softmax_masked(logits, std::vector<std::uint8_t>(logits.value().size(), 1));
}

inline Var mean_rows(const Var& a) {
  const Tensor& x = a.value();
  x.require_matrix("mean-rows");
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out = Tensor::matrix(1, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(0, j) += x(i, j);
  for (std::size_t j = 0; j < c; ++j) out(0, j) /= static_cast<double>(r);
  const std::size_t ia = a.id();
  return a.tape().record(OpKind::kMeanRows, {ia}, std::move(out), [ia, r, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& dx = t.grad_mut(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dx(i, j) += g(0, j) / static_cast<double>(r);
  });
}

inline Var sum(const Var& a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.values()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record(OpKind::kSum, {ia}, Tensor::scalar(s), [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    Tensor& dx = t.grad_mut(ia);
    for (std::size_t k = 0; k < dx.size(); ++k) dx[k] += g;
  });
}

/// Inverted dropout. Identity (same node) when not training or rate == 0.
inline Var dropout(const Var& a, double rate, std::uint64_t seed, bool train) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must lie in [0, 1)");
  if (!train || rate == 0.0) return a;
  const Tensor& x = a.value();
  Rng rng(seed);
  std::vector<double> keep(x.size());
  const double scale = 1.0 / (1.0 - rate);
  for (auto& k : keep) k = rng.uniform() >= rate ? scale : 0.0;
  Tensor out(x.shape());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] * keep[k];
  const std::size_t ia = a.id();
  return a.tape().record(OpKind::kDropout, {ia}, std::move(out),
                         [ia, keep = std::move(keep)](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           Tensor& dx = t.grad_mut(ia);
                           for (std::size_t k = 0; k < g.size(); ++k) dx[k] += g[k] * keep[k];
                         });
}

inline Var transpose(const Var& a) {
  const Tensor& x = a.value();
  x.require_matrix("transpose");
  Tensor out = Tensor::matrix(x.cols(), x.rows());
  detail::mmap(out) = detail::cmap(x).transpose();
  const std::size_t ia = a.id();
  return a.tape().record(OpKind::kTranspose, {ia}, std::move(out), [ia](Tape& t, std::size_t self) {
    detail::mmap(t.grad_mut(ia)) += detail::cmap(t.grad(self)).transpose();
  });
}

/// Columns [begin, end).
inline Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  x.require_matrix("slice-cols");
  if (begin >= end || end > x.cols()) {
    throw DimensionError("slice-cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") outside " + shape_str(x.shape()));
  }
  const std::size_t r = x.rows(), w = end - begin;
  Tensor out = Tensor::matrix(r, w);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out(i, j) = x(i, begin + j);
  const std::size_t ia = a.id();
  return a.tape().record(OpKind::kSliceCols, {ia}, std::move(out), [ia, r, w, begin](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& dx = t.grad_mut(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) dx(i, begin + j) += g(i, j);
  });
}

/// out[r] = a[index[r]]; indices may repeat (embedding lookup).
inline Var gather_rows(const Var& a, std::vector<std::size_t> index) {
  const Tensor& x = a.value();
  x.require_matrix("gather-rows");
  if (index.empty()) throw DimensionError("gather-rows: empty index list");
  const std::size_t c = x.cols();
  Tensor out = Tensor::matrix(index.size(), c);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= x.rows()) {
      throw DimensionError("gather-rows: row " + std::to_string(index[r]) + " outside " + shape_str(x.shape()));
    }
    std::copy_n(x.values().data() + index[r] * c, c, &out(r, 0));
  }
  const std::size_t ia = a.id();
  return a.tape().record(OpKind::kGatherRows, {ia}, std::move(out),
                         [ia, c, index = std::move(index)](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           Tensor& dx = t.grad_mut(ia);
                           for (std::size_t r = 0; r < index.size(); ++r)
                             for (std::size_t j = 0; j < c; ++j) dx(index[r], j) += g(r, j);
                         });
}

/// Copy of base with rows index[r] replaced by src[r]; indices must be unique.
inline Var assign_rows(const Var& base, const std::vector<std::size_t>& index, const Var& src) {
  detail::same_tape(base, src, OpKind::kAssignRows);
  const Tensor& b = base.value();
  const Tensor& s = src.value();
  b.require_matrix("assign-rows");
  s.require_matrix("assign-rows");
  if (s.rows() != index.size() || s.cols() != b.cols()) {
    detail::shape_mismatch(OpKind::kAssignRows, b.shape(), s.shape());
  }
  const std::size_t c = b.cols();
  std::vector<std::uint8_t> replaced(b.rows(), 0);
  Tensor out = b;
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= b.rows() || replaced[index[r]]) {
      throw ContractError("assign-rows: index " + std::to_string(index[r]) + " out of range or repeated");
    }
    replaced[index[r]] = 1;
    std::copy_n(s.values().data() + r * c, c, &out(index[r], 0));
  }
  const std::size_t ib = base.id(), is = src.id();
  return base.tape().record(OpKind::kAssignRows, {ib, is}, std::move(out),
                            [=](Tape& t, std::size_t self) {
                              const Tensor& g = t.grad(self);
                              if (t.requires_grad(ib)) {
                                Tensor& db = t.grad_mut(ib);
                                for (std::size_t i = 0; i < replaced.size(); ++i)
                                  if (!replaced[i])
                                    for (std::size_t j = 0; j < c; ++j) db(i, j) += g(i, j);
                              }
                              if (t.requires_grad(is)) {
                                Tensor& ds = t.grad_mut(is);
                                for (std::size_t r = 0; r < index.size(); ++r)
                                  for (std::size_t j = 0; j < c; ++j) ds(r, j) += g(index[r], j);
                              }
                            });
}

/// Row-wise normalization followed by gain [1 x n] and bias [1 x n].
inline Var layer_norm(const Var& a, const Var& gain, const Var& bias, double eps = 1e-5) {
  const Tensor& x = a.value();
  x.require_matrix("layer-norm");
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.value().shape() != Shape{1, c}) detail::shape_mismatch(OpKind::kLayerNorm, x.shape(), gain.shape());
  if (bias.value().shape() != Shape{1, c}) detail::shape_mismatch(OpKind::kLayerNorm, x.shape(), bias.shape());
  Tensor xhat = Tensor::matrix(r, c);
  std::vector<double> inv_std(r);
  Tensor out = Tensor::matrix(r, c);
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += x(i, j);
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat(i, j) = (x(i, j) - mu) * inv_std[i];
      out(i, j) = xhat(i, j) * gv(0, j) + bv(0, j);
    }
  }
  const std::size_t ia = a.id(), ig = gain.id(), ib = bias.id();
  return a.tape().record(
      OpKind::kLayerNorm, {ia, ig, ib}, std::move(out),
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& gv = t.value(ig);
        if (t.requires_grad(ig) || t.requires_grad(ib)) {
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
              if (t.requires_grad(ig)) t.grad_mut(ig)(0, j) += g(i, j) * xhat(i, j);
              if (t.requires_grad(ib)) t.grad_mut(ib)(0, j) += g(i, j);
            }
          }
        }
        if (!t.requires_grad(ia)) return;
        Tensor& dx = t.grad_mut(ia);
        const double n = static_cast<double>(c);
        for (std::size_t i = 0; i < r; ++i) {
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            const double d = g(i, j) * gv(0, j);
            s1 += d;
            s2 += d * xhat(i, j);
          }
          for (std::size_t j = 0; j < c; ++j) {
            const double d = g(i, j) * gv(0, j);
            dx(i, j) += inv_std[i] / n * (n * d - s1 - xhat(i, j) * s2);
          }
        }
      });
}

/// -log sum_{g in gold} softmax(scores)_g for a single-row score vector.
inline Var neg_log_marginal(const Var& scores, const std::vector<std::size_t>& gold) {
  const Tensor& x = scores.value();
  x.require_matrix("neg-log-marginal");
  if (x.rows() != 1) throw DimensionError("neg-log-marginal: expected one row, got " + shape_str(x.shape()));
  if (gold.empty()) throw ContractError("neg-log-marginal: no gold positions");
  const std::size_t n = x.cols();
  std::vector<std::uint8_t> is_gold(n, 0);
  for (std::size_t gidx : gold) {
    if (gidx >= n) {
      throw ContractError("neg-log-marginal: gold position " + std::to_string(gidx) + " outside " +
                          std::to_string(n) + " scores");
    }
    is_gold[gidx] = 1;
  }
  const double mx = *std::max_element(x.values().begin(), x.values().end());
  double z_all = 0.0, z_gold = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double e = std::exp(x[j] - mx);
    z_all += e;
    if (is_gold[j]) z_gold += e;
  }
  const double loss = std::log(z_all) - std::log(z_gold);
  const std::size_t ia = scores.id();
  return scores.tape().record(OpKind::kNegLogMarginal, {ia}, Tensor::scalar(loss),
                              [=](Tape& t, std::size_t self) {
                                const double g = t.grad(self)[0];
                                const Tensor& xv = t.value(ia);
                                Tensor& dx = t.grad_mut(ia);
                                for (std::size_t j = 0; j < n; ++j) {
                                  const double e = std::exp(xv[j] - mx);
                                  const double p = e / z_all;
                                  const double q = is_gold[j] ? e / z_gold : 0.0;
                                  dx[j] += g * (p - q);
                                }
                              });
}

}  // namespace piecer
