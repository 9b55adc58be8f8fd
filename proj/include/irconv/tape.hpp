#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <new>
#include <string>
#include <utility>
#include <vector>

#include "irconv/tensor.hpp"

namespace irconv {

template <class Real> class Tape;

// Handle to a node on a tape.  Cheap to copy; valid as long as the tape is.
template <class Real> struct Var {
  Tape<Real> *tape = nullptr;
  std::int32_t id = -1;
};

namespace detail {

// Visit every element of the broadcast output shape, producing the linear
// offsets into the two (broadcast) inputs.  Fast paths cover the common
// cases: identical shapes and scalar operands.
template <class Real, class F>
void bc_iterate(const Shape &out, const Shape &a, const Shape &b, F &&f) {
  const std::int64_t n = numel(out);
  if (a == out && b == out) {
    for (std::int64_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  if (a == out && numel(b) == 1) {
    for (std::int64_t i = 0; i < n; ++i) f(i, i, 0);
    return;
  }
  if (b == out && numel(a) == 1) {
    for (std::int64_t i = 0; i < n; ++i) f(i, 0, i);
    return;
  }
  const std::size_t rank = out.size();
  const auto sa = broadcast_strides(a, rank);
  const auto sb = broadcast_strides(b, rank);
  std::vector<std::int64_t> coord(rank, 0);
  std::int64_t offa = 0, offb = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    f(i, offa, offb);
    for (std::size_t d = rank; d-- > 0;) {
      ++coord[d];
      offa += sa[d];
      offb += sb[d];
      if (coord[d] < out[d]) break;
      offa -= sa[d] * out[d];
      offb -= sb[d] * out[d];
      coord[d] = 0;
    }
  }
}

// Split a shape at `axis` into (outer, extent, inner) for reductions.
inline void axis_split(const Shape &s, std::int64_t axis, std::int64_t &outer,
                       std::int64_t &n, std::int64_t &inner) {
  outer = 1;
  inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= s[i];
  n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

} // namespace detail

// Reverse-mode autodiff tape.  Nodes are appended in evaluation order;
// backward() walks them in reverse, invoking per-node closures that
// accumulate into input gradients.  Single-threaded and deterministic: the
// gradient of a fixed graph is bitwise reproducible.
template <class Real> class Tape {
public:
  struct Node {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;
    const char *op = "";
    bool live = false; // does some leaf with requires_grad feed this node?
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  Var<Real> input(Tensor<Real> t, bool requires_grad = true) {
    return push("input", std::move(t.shape), std::move(t.data), requires_grad, {});
  }

  Var<Real> constant(Tensor<Real> t) {
    return push("const", std::move(t.shape), std::move(t.data), false, {});
  }

  Var<Real> constant_scalar(Real v) { return push("const", {1}, {v}, false, {}); }

  Node &node(std::int32_t id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node &node(std::int32_t id) const {
    return nodes_[static_cast<std::size_t>(id)];
  }
  std::int64_t size() const { return static_cast<std::int64_t>(nodes_.size()); }

  const std::vector<Real> &val(Var<Real> v) const { return node(v.id).value; }
  const Shape &shape_of(Var<Real> v) const { return node(v.id).shape; }

  Tensor<Real> value_tensor(Var<Real> v) const {
    return Tensor<Real>(node(v.id).shape, node(v.id).value);
  }
  Tensor<Real> grad_tensor(Var<Real> v) const {
    const Node &n = node(v.id);
    if (n.grad.empty() && !n.value.empty())
      return Tensor<Real>::zeros(n.shape);
    return Tensor<Real>(n.shape, n.grad);
  }

  Real item(Var<Real> v) const {
    if (numel(node(v.id).shape) != 1)
      throw std::invalid_argument("item: node is not scalar, shape " +
                                  shape_str(node(v.id).shape));
    return node(v.id).value[0];
  }

  // Seed d(loss)/d(loss) = 1 and sweep the tape in reverse.  `loss` must be
  // a scalar (one element).
  void backward(Var<Real> loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: foreign var");
    if (numel(node(loss.id).shape) != 1)
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  shape_str(node(loss.id).shape));
    for (auto &n : nodes_) n.grad.assign(n.value.size(), Real(0));
    node(loss.id).grad[0] = Real(1);
    for (std::int32_t id = loss.id; id >= 0; --id) {
      Node &n = node(id);
      if (n.live && n.backward) n.backward();
    }
  }

  // Name and index of the first node holding a non-finite value, if any.
  // Used for the training-loop abort diagnostics.
  std::pair<std::int32_t, std::string> first_non_finite() const {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      for (Real v : nodes_[i].value)
        if (!std::isfinite(static_cast<double>(v)))
          return {static_cast<std::int32_t>(i), nodes_[i].op};
    return {-1, ""};
  }

  Var<Real> push(const char *op, Shape shape, std::vector<Real> value, bool live,
                 std::function<void()> backward) {
    Node n;
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.op = op;
    n.live = live;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<Real>{this, static_cast<std::int32_t>(nodes_.size() - 1)};
  }

private:
  // deque: growth never invalidates node references held across op calls.
  std::deque<Node> nodes_;
};

namespace detail {

template <class Real>
Tape<Real> &same_tape(Var<Real> a, Var<Real> b, const char *op) {
  if (!a.tape || a.tape != b.tape)
    throw std::invalid_argument(std::string(op) + ": operands on different tapes");
  return *a.tape;
}

} // namespace detail

// ---- elementwise binary ops (numpy broadcasting) --------------------------

template <class Real> Var<Real> add(Var<Real> a, Var<Real> b) {
  Tape<Real> &t = detail::same_tape(a, b, "add");
  const auto &A = t.node(a.id), &B = t.node(b.id);
  Shape out = broadcast_shapes(A.shape, B.shape);
  std::vector<Real> v(static_cast<std::size_t>(numel(out)));
  detail::bc_iterate<Real>(out, A.shape, B.shape,
                           [&](std::int64_t i, std::int64_t ja, std::int64_t jb) {
                             v[i] = A.value[ja] + B.value[jb];
                           });
  bool live = A.live || B.live;
  Var<Real> o = t.push("add", out, std::move(v), live, {});
  if (live)
    t.node(o.id).backward = [&t, o, a, b]() {
      auto &O = t.node(o.id);
      auto &An = t.node(a.id);
      auto &Bn = t.node(b.id);
      detail::bc_iterate<Real>(O.shape, An.shape, Bn.shape,
                               [&](std::int64_t i, std::int64_t ja, std::int64_t jb) {
                                 if (An.live) An.grad[ja] += O.grad[i];
                                 if (Bn.live) Bn.grad[jb] += O.grad[i];
                               });
    };
  return o;
}

template <class Real> Var<Real> sub(Var<Real> a, Var<Real> b) {
  Tape<Real> &t = detail::same_tape(a, b, "sub");
  const auto &A = t.node(a.id), &B = t.node(b.id);
  Shape out = broadcast_shapes(A.shape, B.shape);
  std::vector<Real> v(static_cast<std::size_t>(numel(out)));
  detail::bc_iterate<Real>(out, A.shape, B.shape,
                           [&](std::int64_t i, std::int64_t ja, std::int64_t jb) {
                             v[i] = A.value[ja] - B.value[jb];
                           });
  bool live = A.live || B.live;
  Var<Real> o = t.push("sub", out, std::move(v), live, {});
  if (live)
    t.node(o.id).backward = [&t, o, a, b]() {
      auto &O = t.node(o.id);
      auto &An = t.node(a.id);
      auto &Bn = t.node(b.id);
      detail::bc_iterate<Real>(O.shape, An.shape, Bn.shape,
                               [&](std::int64_t i, std::int64_t ja, std::int64_t jb) {
                                 if (An.live) An.grad[ja] += O.grad[i];
                                 if (Bn.live) Bn.grad[jb] -= O.grad[i];
                               });
    };
  return o;
}

template <class Real> Var<Real> mul(Var<Real> a, Var<Real> b) {
  Tape<Real> &t = detail::same_tape(a, b, "mul");
  const auto &A = t.node(a.id), &B = t.node(b.id);
  Shape out = broadcast_shapes(A.shape, B.shape);
  std::vector<Real> v(static_cast<std::size_t>(numel(out)));
  detail::bc_iterate<Real>(out, A.shape, B.shape,
                           [&](std::int64_t i, std::int64_t ja, std::int64_t jb) {
                             v[i] = A.value[ja] * B.value[jb];
                           });
  bool live = A.live || B.live;
  Var<Real> o = t.push("mul", out, std::move(v), live, {});
  if (live)
    t.node(o.id).backward = [&t, o, a, b]() {
      auto &O = t.node(o.id);
      auto &An = t.node(a.id);
      auto &Bn = t.node(b.id);
      detail::bc_iterate<Real>(O.shape, An.shape, Bn.shape,
                               [&](std::int64_t i, std::int64_t ja, std::int64_t jb) {
                                 if (An.live) An.grad[ja] += O.grad[i] * Bn.value[jb];
                                 if (Bn.live) Bn.grad[jb] += O.grad[i] * An.value[ja];
                               });
    };
  return o;
}

template <class Real> Var<Real> div(Var<Real> a, Var<Real> b) {
  Tape<Real> &t = detail::same_tape(a, b, "div");
  const auto &A = t.node(a.id), &B = t.node(b.id);
  Shape out = broadcast_shapes(A.shape, B.shape);
  std::vector<Real> v(static_cast<std::size_t>(numel(out)));
  detail::bc_iterate<Real>(out, A.shape, B.shape,
                           [&](std::int64_t i, std::int64_t ja, std::int64_t jb) {
                             v[i] = A.value[ja] / B.value[jb];
                           });
  bool live = A.live || B.live;
  Var<Real> o = t.push("div", out, std::move(v), live, {});
  if (live)
    t.node(o.id).backward = [&t, o, a, b]() {
      auto &O = t.node(o.id);
      auto &An = t.node(a.id);
      auto &Bn = t.node(b.id);
      detail::bc_iterate<Real>(O.shape, An.shape, Bn.shape,
                               [&](std::int64_t i, std::int64_t ja, std::int64_t jb) {
                                 Real inv = Real(1) / Bn.value[jb];
                                 if (An.live) An.grad[ja] += O.grad[i] * inv;
                                 if (Bn.live)
                                   Bn.grad[jb] -= O.grad[i] * An.value[ja] * inv * inv;
                               });
    };
  return o;
}

template <class Real> Var<Real> neg(Var<Real> a) {
  Tape<Real> &t = *a.tape;
  const auto &A = t.node(a.id);
  std::vector<Real> v(A.value.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = -A.value[i];
  bool live = A.live;
  Var<Real> o = t.push("neg", A.shape, std::move(v), live, {});
  if (live)
    t.node(o.id).backward = [&t, o, a]() {
      auto &O = t.node(o.id);
      auto &An = t.node(a.id);
      for (std::size_t i = 0; i < O.grad.size(); ++i) An.grad[i] -= O.grad[i];
    };
  return o;
}

// Multiply by a compile-time-known scalar constant (no extra node for it).
template <class Real> Var<Real> scale(Var<Real> a, Real c) {
  Tape<Real> &t = *a.tape;
  const auto &A = t.node(a.id);
  std::vector<Real> v(A.value.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = A.value[i] * c;
  bool live = A.live;
  Var<Real> o = t.push("scale", A.shape, std::move(v), live, {});
  if (live)
    t.node(o.id).backward = [&t, o, a, c]() {
      auto &O = t.node(o.id);
      auto &An = t.node(a.id);
      for (std::size_t i = 0; i < O.grad.size(); ++i) An.grad[i] += O.grad[i] * c;
    };
  return o;
}

template <class Real> Var<Real> add_scalar(Var<Real> a, Real c) {
  Tape<Real> &t = *a.tape;
  const auto &A = t.node(a.id);
  std::vector<Real> v(A.value.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = A.value[i] + c;
  bool live = A.live;
  Var<Real> o = t.push("add_scalar", A.shape, std::move(v), live, {});
  if (live)
    t.node(o.id).backward = [&t, o, a]() {
      auto &O = t.node(o.id);
      auto &An = t.node(a.id);
      for (std::size_t i = 0; i < O.grad.size(); ++i) An.grad[i] += O.grad[i];
    };
  return o;
}

template <class Real> Var<Real> operator+(Var<Real> a, Var<Real> b) { return add(a, b); }
template <class Real> Var<Real> operator-(Var<Real> a, Var<Real> b) { return sub(a, b); }
template <class Real> Var<Real> operator*(Var<Real> a, Var<Real> b) { return mul(a, b); }
template <class Real> Var<Real> operator/(Var<Real> a, Var<Real> b) { return div(a, b); }
template <class Real> Var<Real> operator-(Var<Real> a) { return neg(a); }
template <class Real> Var<Real> operator*(Real c, Var<Real> a) { return scale(a, c); }
template <class Real> Var<Real> operator*(Var<Real> a, Real c) { return scale(a, c); }

// ---- matmul ----------------------------------------------------------------

template <class Real>
using EigenMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

// Eigen's vectorized kernels pick their peel and remainder paths from the
// runtime addresses they are handed, so the same product over the same
// values can round differently depending on where the allocator happened to
// place a buffer.  Every product operand is therefore staged through
// fixed-alignment scratch, which keeps training runs bit-reproducible.
template <class Real> class AlignedBuf {
public:
  explicit AlignedBuf(std::size_t n)
      : p_(static_cast<Real *>(
            ::operator new(n * sizeof(Real), std::align_val_t(64)))) {}
  AlignedBuf(const AlignedBuf &) = delete;
  AlignedBuf &operator=(const AlignedBuf &) = delete;
  ~AlignedBuf() { ::operator delete(p_, std::align_val_t(64)); }
  Real *get() { return p_; }

private:
  Real *p_;
};

// out = A (n,k) * B (k,m), all row-major and unstrided.
template <class Real>
void gemm_stable(const Real *a, const Real *b, Real *out, std::int64_t n,
                 std::int64_t k, std::int64_t m, bool transpose_a,
                 bool transpose_b) {
  const std::size_t na = static_cast<std::size_t>(n * k);
  const std::size_t nb = static_cast<std::size_t>(k * m);
  const std::size_t no = static_cast<std::size_t>(n * m);
  AlignedBuf<Real> sa(na), sb(nb), so(no);
  std::copy(a, a + na, sa.get());
  std::copy(b, b + nb, sb.get());
  Eigen::Map<const EigenMat<Real>> ma(sa.get(), transpose_a ? k : n,
                                      transpose_a ? n : k);
  Eigen::Map<const EigenMat<Real>> mb(sb.get(), transpose_b ? m : k,
                                      transpose_b ? k : m);
  Eigen::Map<EigenMat<Real>> mo(so.get(), n, m);
  if (transpose_a)
    mo.noalias() = ma.transpose() * mb;
  else if (transpose_b)
    mo.noalias() = ma * mb.transpose();
  else
    mo.noalias() = ma * mb;
  std::copy(so.get(), so.get() + no, out);
}

} // namespace detail

template <class Real> Var<Real> matmul(Var<Real> a, Var<Real> b) {
  Tape<Real> &t = detail::same_tape(a, b, "matmul");
  const auto &A = t.node(a.id), &B = t.node(b.id);
  if (A.shape.size() != 2 || B.shape.size() != 2)
    throw std::invalid_argument("matmul: expects rank-2 operands, got " +
                                shape_str(A.shape) + " and " + shape_str(B.shape));
  if (A.shape[1] != B.shape[0])
    throw std::invalid_argument("matmul: inner extents disagree, " +
                                shape_str(A.shape) + " x " + shape_str(B.shape));
  const std::int64_t n = A.shape[0], k = A.shape[1], m = B.shape[1];
  std::vector<Real> v(static_cast<std::size_t>(n * m));
  detail::gemm_stable(A.value.data(), B.value.data(), v.data(), n, k, m, false,
                      false);
  bool live = A.live || B.live;
  Var<Real> o = t.push("matmul", {n, m}, std::move(v), live, {});
  if (live)
    t.node(o.id).backward = [&t, o, a, b, n, k, m]() {
      auto &O = t.node(o.id);
      auto &An = t.node(a.id);
      auto &Bn = t.node(b.id);
      if (An.live) {
        std::vector<Real> r(static_cast<std::size_t>(n * k));
        detail::gemm_stable(O.grad.data(), Bn.value.data(), r.data(), n, m, k,
                            false, true);
        for (std::size_t i = 0; i < r.size(); ++i) An.grad[i] += r[i];
      }
      if (Bn.live) {
        std::vector<Real> r(static_cast<std::size_t>(k * m));
        detail::gemm_stable(An.value.data(), O.grad.data(), r.data(), k, n, m,
                            true, false);
        for (std::size_t i = 0; i < r.size(); ++i) Bn.grad[i] += r[i];
      }
    };
  return o;
}

// ---- structural ops --------------------------------------------------------

template <class Real> Var<Real> reshape(Var<Real> a, Shape s) {
  Tape<Real> &t = *a.tape;
  const auto &A = t.node(a.id);
  if (numel(s) != numel(A.shape))
    throw std::invalid_argument("reshape: cannot reshape " + shape_str(A.shape) +
                                " to " + shape_str(s));
  bool live = A.live;
  Var<Real> o = t.push("reshape", std::move(s), A.value, live, {});
  if (live)
    t.node(o.id).backward = [&t, o, a]() {
      auto &O = t.node(o.id);
      auto &An = t.node(a.id);
      for (std::size_t i = 0; i < O.grad.size(); ++i) An.grad[i] += O.grad[i];
    };
  return o;
}

template <class Real> Var<Real> concat(Var<Real> a, Var<Real> b, std::int64_t axis) {
  Tape<Real> &t = detail::same_tape(a, b, "concat");
  const auto &A = t.node(a.id), &B = t.node(b.id);
  if (A.shape.size() != B.shape.size())
    throw std::invalid_argument("concat: rank mismatch " + shape_str(A.shape) +
                                " vs " + shape_str(B.shape));
  if (axis < 0 || axis >= static_cast<std::int64_t>(A.shape.size()))
    throw std::invalid_argument("concat: axis " + std::to_string(axis) +
                                " out of range for " + shape_str(A.shape));
  for (std::size_t i = 0; i < A.shape.size(); ++i)
    if (static_cast<std::int64_t>(i) != axis && A.shape[i] != B.shape[i])
      throw std::invalid_argument("concat: extents disagree off axis, " +
                                  shape_str(A.shape) + " vs " + shape_str(B.shape));
  Shape out = A.shape;
  out[axis] += B.shape[axis];
  std::int64_t outer, na, inner;
  detail::axis_split(A.shape, axis, outer, na, inner);
  const std::int64_t nb = B.shape[axis];
  std::vector<Real> v(static_cast<std::size_t>(numel(out)));
  const std::int64_t ablk = na * inner, bblk = nb * inner;
  for (std::int64_t ou = 0; ou < outer; ++ou) {
    std::copy_n(A.value.data() + ou * ablk, ablk, v.data() + ou * (ablk + bblk));
    std::copy_n(B.value.data() + ou * bblk, bblk,
                v.data() + ou * (ablk + bblk) + ablk);
  }
  bool live = A.live || B.live;
  Var<Real> o = t.push("concat", std::move(out), std::move(v), live, {});
  if (live)
    t.node(o.id).backward = [&t, o, a, b, outer, ablk, bblk]() {
      auto &O = t.node(o.id);
      auto &An = t.node(a.id);
      auto &Bn = t.node(b.id);
      for (std::int64_t ou = 0; ou < outer; ++ou) {
        const Real *g = O.grad.data() + ou * (ablk + bblk);
        if (An.live) {
          Real *ga = An.grad.data() + ou * ablk;
          for (std::int64_t i = 0; i < ablk; ++i) ga[i] += g[i];
        }
        if (Bn.live) {
          Real *gb = Bn.grad.data() + ou * bblk;
          for (std::int64_t i = 0; i < bblk; ++i) gb[i] += g[i + ablk];
        }
      }
    };
  return o;
}

template <class Real>
Var<Real> slice_axis(Var<Real> a, std::int64_t axis, std::int64_t begin,
                     std::int64_t end) {
  Tape<Real> &t = *a.tape;
  const auto &A = t.node(a.id);
  if (axis < 0 || axis >= static_cast<std::int64_t>(A.shape.size()))
    throw std::invalid_argument("slice: axis " + std::to_string(axis) +
                                " out of range for " + shape_str(A.shape));
  if (begin < 0 || end > A.shape[axis] || begin >= end)
    throw std::invalid_argument("slice: range [" + std::to_string(begin) + "," +
                                std::to_string(end) + ") invalid for axis extent " +
                                std::to_string(A.shape[axis]));
  Shape out = A.shape;
  out[axis] = end - begin;
  std::int64_t outer, n, inner;
  detail::axis_split(A.shape, axis, outer, n, inner);
  const std::int64_t w = (end - begin) * inner, src_blk = n * inner;
  std::vector<Real> v(static_cast<std::size_t>(numel(out)));
  for (std::int64_t ou = 0; ou < outer; ++ou)
    std::copy_n(A.value.data() + ou * src_blk + begin * inner, w, v.data() + ou * w);
  bool live = A.live;
  Var<Real> o = t.push("slice", std::move(out), std::move(v), live, {});
  if (live)
    t.node(o.id).backward = [&t, o, a, outer, w, src_blk, begin, inner]() {
      auto &O = t.node(o.id);
      auto &An = t.node(a.id);
      for (std::int64_t ou = 0; ou < outer; ++ou) {
        const Real *g = O.grad.data() + ou * w;
        Real *ga = An.grad.data() + ou * src_blk + begin * inner;
        for (std::int64_t i = 0; i < w; ++i) ga[i] += g[i];
      }
    };
  return o;
}

// Gather rows of a rank-2 tensor; indices may repeat (backward scatter-adds).
template <class Real>
Var<Real> gather_rows(Var<Real> a, std::vector<std::int64_t> idx) {
  Tape<Real> &t = *a.tape;
  const auto &A = t.node(a.id);
  if (A.shape.size() != 2)
    throw std::invalid_argument("gather_rows: expects rank-2 input, got " +
                                shape_str(A.shape));
  const std::int64_t rows = A.shape[0], cols = A.shape[1];
  for (auto i : idx)
    if (i < 0 || i >= rows)
      throw std::invalid_argument("gather_rows: index " + std::to_string(i) +
                                  " out of range [0," + std::to_string(rows) + ")");
  const std::int64_t m = static_cast<std::int64_t>(idx.size());
  std::vector<Real> v(static_cast<std::size_t>(m * cols));
  for (std::int64_t r = 0; r < m; ++r)
    std::copy_n(A.value.data() + idx[r] * cols, cols, v.data() + r * cols);
  bool live = A.live;
  Var<Real> o = t.push("gather_rows", {m, cols}, std::move(v), live, {});
  if (live)
    t.node(o.id).backward = [&t, o, a, idx = std::move(idx), cols]() {
      auto &O = t.node(o.id);
      auto &An = t.node(a.id);
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const Real *g = O.grad.data() + static_cast<std::int64_t>(r) * cols;
        Real *ga = An.grad.data() + idx[r] * cols;
        for (std::int64_t c = 0; c < cols; ++c) ga[c] += g[c];
      }
    };
  return o;
}

// ---- reductions ------------------------------------------------------------

template <class Real>
Var<Real> reduce_sum(Var<Real> a, std::int64_t axis, bool keepdims = false) {
  Tape<Real> &t = *a.tape;
  const auto &A = t.node(a.id);
  if (axis < 0 || axis >= static_cast<std::int64_t>(A.shape.size()))
    throw std::invalid_argument("reduce_sum: axis " + std::to_string(axis) +
                                " out of range for " + shape_str(A.shape));
  std::int64_t outer, n, inner;
  detail::axis_split(A.shape, axis, outer, n, inner);
  Shape out;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(A.shape.size()); ++i) {
    if (i == axis) {
      if (keepdims) out.push_back(1);
    } else {
      out.push_back(A.shape[i]);
    }
  }
  if (out.empty()) out.push_back(1);
  std::vector<Real> v(static_cast<std::size_t>(outer * inner), Real(0));
  for (std::int64_t ou = 0; ou < outer; ++ou)
    for (std::int64_t j = 0; j < n; ++j) {
      const Real *src = A.value.data() + (ou * n + j) * inner;
      Real *dst = v.data() + ou * inner;
      for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  bool live = A.live;
  Var<Real> o = t.push("reduce_sum", std::move(out), std::move(v), live, {});
  if (live)
    t.node(o.id).backward = [&t, o, a, outer, n, inner]() {
      auto &O = t.node(o.id);
      auto &An = t.node(a.id);
      for (std::int64_t ou = 0; ou < outer; ++ou)
        for (std::int64_t j = 0; j < n; ++j) {
          Real *ga = An.grad.data() + (ou * n + j) * inner;
          const Real *g = O.grad.data() + ou * inner;
          for (std::int64_t i = 0; i < inner; ++i) ga[i] += g[i];
        }
    };
  return o;
}

template <class Real> Var<Real> sum_all(Var<Real> a) {
  Tape<Real> &t = *a.tape;
  const auto &A = t.node(a.id);
  Real s = 0;
  for (Real x : A.value) s += x;
  bool live = A.live;
  Var<Real> o = t.push("sum_all", {1}, {s}, live, {});
  if (live)
    t.node(o.id).backward = [&t, o, a]() {
      auto &O = t.node(o.id);
      auto &An = t.node(a.id);
      const Real g = O.grad[0];
      for (auto &ga : An.grad) ga += g;
    };
  return o;
}

// Max over one axis.  Ties route the gradient to the first maximal element
// along the axis, so duplicated inputs do not double-count.
template <class Real>
Var<Real> reduce_max(Var<Real> a, std::int64_t axis, bool keepdims = false) {
  Tape<Real> &t = *a.tape;
  const auto &A = t.node(a.id);
  if (axis < 0 || axis >= static_cast<std::int64_t>(A.shape.size()))
    throw std::invalid_argument("reduce_max: axis " + std::to_string(axis) +
                                " out of range for " + shape_str(A.shape));
  std::int64_t outer, n, inner;
  detail::axis_split(A.shape, axis, outer, n, inner);
  if (n == 0) throw std::invalid_argument("reduce_max: empty axis");
  Shape out;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(A.shape.size()); ++i) {
    if (i == axis) {
      if (keepdims) out.push_back(1);
    } else {
      out.push_back(A.shape[i]);
    }
  }
  if (out.empty()) out.push_back(1);
  std::vector<Real> v(static_cast<std::size_t>(outer * inner));
  std::vector<std::int64_t> arg(static_cast<std::size_t>(outer * inner));
  for (std::int64_t ou = 0; ou < outer; ++ou)
    for (std::int64_t i = 0; i < inner; ++i) {
      Real best = A.value[(ou * n) * inner + i];
      std::int64_t bj = 0;
      for (std::int64_t j = 1; j < n; ++j) {
        Real x = A.value[(ou * n + j) * inner + i];
        if (x > best) {
          best = x;
          bj = j;
        }
      }
      v[ou * inner + i] = best;
      arg[ou * inner + i] = bj;
    }
  bool live = A.live;
  Var<Real> o = t.push("reduce_max", std::move(out), std::move(v), live, {});
  if (live)
    t.node(o.id).backward = [&t, o, a, arg = std::move(arg), n, inner]() {
      auto &O = t.node(o.id);
      auto &An = t.node(a.id);
      for (std::size_t oi = 0; oi < O.grad.size(); ++oi) {
        std::int64_t ou = static_cast<std::int64_t>(oi) / inner;
        std::int64_t i = static_cast<std::int64_t>(oi) % inner;
        An.grad[(ou * n + arg[oi]) * inner + i] += O.grad[oi];
      }
    };
  return o;
}

// ---- nonlinearities --------------------------------------------------------

template <class Real> Var<Real> leaky_relu(Var<Real> a, Real slope) {
  Tape<Real> &t = *a.tape;
  const auto &A = t.node(a.id);
  std::vector<Real> v(A.value.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = A.value[i] >= Real(0) ? A.value[i] : slope * A.value[i];
  bool live = A.live;
  Var<Real> o = t.push("leaky_relu", A.shape, std::move(v), live, {});
  if (live)
    t.node(o.id).backward = [&t, o, a, slope]() {
      auto &O = t.node(o.id);
      auto &An = t.node(a.id);
      for (std::size_t i = 0; i < O.grad.size(); ++i)
        An.grad[i] += O.grad[i] * (An.value[i] >= Real(0) ? Real(1) : slope);
    };
  return o;
}

template <class Real> Var<Real> tanh(Var<Real> a) {
  Tape<Real> &t = *a.tape;
  const auto &A = t.node(a.id);
  std::vector<Real> v(A.value.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(A.value[i]);
  bool live = A.live;
  Var<Real> o = t.push("tanh", A.shape, std::move(v), live, {});
  if (live)
    t.node(o.id).backward = [&t, o, a]() {
      auto &O = t.node(o.id);
      auto &An = t.node(a.id);
      for (std::size_t i = 0; i < O.grad.size(); ++i)
        An.grad[i] += O.grad[i] * (Real(1) - O.value[i] * O.value[i]);
    };
  return o;
}

// Elementwise square root.  Negative inputs are rejected; at exactly zero
// the (infinite) derivative is replaced by the subgradient 0.
template <class Real> Var<Real> sqrt(Var<Real> a) {
  Tape<Real> &t = *a.tape;
  const auto &A = t.node(a.id);
  std::vector<Real> v(A.value.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (A.value[i] < Real(0))
      throw std::invalid_argument("sqrt: negative input " +
                                  std::to_string(static_cast<double>(A.value[i])));
    v[i] = std::sqrt(A.value[i]);
  }
  bool live = A.live;
  Var<Real> o = t.push("sqrt", A.shape, std::move(v), live, {});
  if (live)
    t.node(o.id).backward = [&t, o, a]() {
      auto &O = t.node(o.id);
      auto &An = t.node(a.id);
      for (std::size_t i = 0; i < O.grad.size(); ++i)
        if (O.value[i] > Real(0))
          An.grad[i] += O.grad[i] * Real(0.5) / O.value[i];
    };
  return o;
}

// Euclidean norm of each row of a rank-2 tensor -> column (N,1).  Zero rows
// get zero gradient (subgradient convention).
template <class Real> Var<Real> row_norm(Var<Real> a) {
  Tape<Real> &t = *a.tape;
  const auto &A = t.node(a.id);
  if (A.shape.size() != 2)
    throw std::invalid_argument("row_norm: expects rank-2 input, got " +
                                shape_str(A.shape));
  const std::int64_t n = A.shape[0], d = A.shape[1];
  std::vector<Real> v(static_cast<std::size_t>(n));
  for (std::int64_t r = 0; r < n; ++r) {
    Real s = 0;
    for (std::int64_t c = 0; c < d; ++c) {
      Real x = A.value[r * d + c];
      s += x * x;
    }
    v[r] = std::sqrt(s);
  }
  bool live = A.live;
  Var<Real> o = t.push("row_norm", {n, 1}, std::move(v), live, {});
  if (live)
    t.node(o.id).backward = [&t, o, a, n, d]() {
      auto &O = t.node(o.id);
      auto &An = t.node(a.id);
      for (std::int64_t r = 0; r < n; ++r) {
        if (O.value[r] <= Real(0)) continue;
        const Real g = O.grad[r] / O.value[r];
        for (std::int64_t c = 0; c < d; ++c)
          An.grad[r * d + c] += g * An.value[r * d + c];
      }
    };
  return o;
}

// Detach: value copied onto the tape as a constant (no gradient flows).
template <class Real> Var<Real> detach(Var<Real> a) {
  return a.tape->constant(a.tape->value_tensor(a));
}

} // namespace irconv
