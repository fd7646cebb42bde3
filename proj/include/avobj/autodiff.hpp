#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include "avobj/tensor.hpp"

namespace avobj {

// Reverse-mode autodiff over a linear tape. Nodes are appended in forward
// order, so iterating the tape backwards visits a valid reverse topological
// order. Gradients are allocated lazily; a node whose grad buffer was never
// touched contributes nothing and its backward closure is skipped.

template <typename S>
class Tape;

template <typename S>
struct Var {
  Tape<S>* tape = nullptr;
  Index id = -1;

  const Tensor<S>& val() const;
  const Shape& shape() const { return val().shape(); }
  Index size() const { return val().size(); }
};

template <typename S>
class Tape {
 public:
  using BackFn = std::function<void(Tape&)>;

  Var<S> leaf(Tensor<S> value) {
    nodes_.push_back(NodeT{std::move(value), Tensor<S>{}, nullptr});
    return Var<S>{this, static_cast<Index>(nodes_.size()) - 1};
  }

  Var<S> push(Tensor<S> value, BackFn back) {
    nodes_.push_back(NodeT{std::move(value), Tensor<S>{}, std::move(back)});
    return Var<S>{this, static_cast<Index>(nodes_.size()) - 1};
  }

  Tensor<S>& value(Index id) { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor<S>& value(Index id) const {
    return nodes_[static_cast<std::size_t>(id)].value;
  }

  bool has_grad(Index id) const {
    return nodes_[static_cast<std::size_t>(id)].grad.size() != 0;
  }

  // Grad buffer, zero-initialized to the value's shape on first access.
  Tensor<S>& grad(Index id) {
    NodeT& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0 && n.value.size() != 0)
      n.grad = Tensor<S>(n.value.shape());
    return n.grad;
  }

  void accum(Index id, const Tensor<S>& g) {
    Tensor<S>& dst = grad(id);
    dst.flat() += g.flat();
  }

  // Seeds d(loss)/d(loss) = 1 and runs the reverse sweep. loss must hold a
  // single element.
  void backward(Var<S> loss) {
    Tensor<S>& seed = grad(loss.id);
    seed[0] = S(1);
    for (Index i = loss.id; i >= 0; --i) {
      NodeT& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.back || n.grad.size() == 0) continue;
      n.back(*this);
    }
  }

  Index size() const { return static_cast<Index>(nodes_.size()); }

  void clear() { nodes_.clear(); }

 private:
  struct NodeT {
    Tensor<S> value;
    Tensor<S> grad;
    BackFn back;
  };
  // deque: references returned by value() stay valid across pushes.
  std::deque<NodeT> nodes_;
};

template <typename S>
const Tensor<S>& Var<S>::val() const {
  return tape->value(id);
}

// ---------------------------------------------------------------------------
// Broadcasting (numpy rules: shapes right-aligned, size-1 dims stretch).

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t n = std::max(a.size(), b.size());
  Shape out(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const Index da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    const Index db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    if (da != db && da != 1 && db != 1)
      throw config_error("cannot broadcast " + shape_str(a) + " with " +
                         shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

namespace detail {

// Strides of `shape` right-aligned into a rank-n frame, 0 on broadcast dims.
inline Shape broadcast_strides(const Shape& shape, const Shape& out) {
  Shape st(out.size(), 0);
  Index stride = 1;
  for (Index i = static_cast<Index>(shape.size()) - 1; i >= 0; --i) {
    const std::size_t oi = out.size() - shape.size() + static_cast<std::size_t>(i);
    st[oi] = shape[static_cast<std::size_t>(i)] == 1 ? 0 : stride;
    stride *= shape[static_cast<std::size_t>(i)];
  }
  return st;
}

template <typename S, typename F>
void broadcast_apply(const Tensor<S>& a, const Tensor<S>& b, Tensor<S>& out,
                     F&& f) {
  const Shape& os = out.shape();
  const Shape sa = broadcast_strides(a.shape(), os);
  const Shape sb = broadcast_strides(b.shape(), os);
  const std::size_t rank = os.size();
  std::vector<Index> ix(rank, 0);
  Index ia = 0, ib = 0;
  const Index n = out.size();
  for (Index flat = 0; flat < n; ++flat) {
    out[flat] = f(a[ia], b[ib]);
    for (Index d = static_cast<Index>(rank) - 1; d >= 0; --d) {
      const std::size_t dd = static_cast<std::size_t>(d);
      ++ix[dd];
      ia += sa[dd];
      ib += sb[dd];
      if (ix[dd] < os[dd]) break;
      ia -= sa[dd] * os[dd];
      ib -= sb[dd] * os[dd];
      ix[dd] = 0;
    }
  }
}

}  // namespace detail

// Sum g down to `target` shape (inverse of broadcasting g's producer).
template <typename S>
Tensor<S> reduce_to(const Tensor<S>& g, const Shape& target) {
  if (g.shape() == target) return g;
  Tensor<S> out(target);
  const Shape st = detail::broadcast_strides(target, g.shape());
  const Shape& gs = g.shape();
  const std::size_t rank = gs.size();
  std::vector<Index> ix(rank, 0);
  Index io = 0;
  const Index n = g.size();
  for (Index flat = 0; flat < n; ++flat) {
    out[io] += g[flat];
    for (Index d = static_cast<Index>(rank) - 1; d >= 0; --d) {
      const std::size_t dd = static_cast<std::size_t>(d);
      ++ix[dd];
      io += st[dd];
      if (ix[dd] < gs[dd]) break;
      io -= st[dd] * gs[dd];
      ix[dd] = 0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise binary ops.

namespace detail {

template <typename S, typename Fwd, typename BackA, typename BackB>
Var<S> binary_op(Var<S> a, Var<S> b, Fwd fwd, BackA back_a, BackB back_b) {
  Tape<S>& tp = *a.tape;
  const Tensor<S>& va = a.val();
  const Tensor<S>& vb = b.val();
  Tensor<S> out(broadcast_shape(va.shape(), vb.shape()));
  broadcast_apply(va, vb, out, fwd);
  const Index ia = a.id, ib = b.id, io = tp.size();
  return tp.push(std::move(out), [ia, ib, io, back_a, back_b](Tape<S>& t) {
    const Tensor<S>& g = t.grad(io);
    const Tensor<S>& va = t.value(ia);
    const Tensor<S>& vb = t.value(ib);
    {
      Tensor<S> ga(g.shape());
      broadcast_apply(va, vb, ga, back_a);
      ga.flat() = ga.flat().cwiseProduct(g.flat());
      t.accum(ia, reduce_to(ga, va.shape()));
    }
    {
      Tensor<S> gb(g.shape());
      broadcast_apply(va, vb, gb, back_b);
      gb.flat() = gb.flat().cwiseProduct(g.flat());
      t.accum(ib, reduce_to(gb, vb.shape()));
    }
  });
}

}  // namespace detail

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  return detail::binary_op(
      a, b, [](S x, S y) { return x + y; }, [](S, S) { return S(1); },
      [](S, S) { return S(1); });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  return detail::binary_op(
      a, b, [](S x, S y) { return x - y; }, [](S, S) { return S(1); },
      [](S, S) { return S(-1); });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  return detail::binary_op(
      a, b, [](S x, S y) { return x * y; }, [](S, S y) { return y; },
      [](S x, S) { return x; });
}

template <typename S>
Var<S> div(Var<S> a, Var<S> b) {
  return detail::binary_op(
      a, b, [](S x, S y) { return x / y; }, [](S, S y) { return S(1) / y; },
      [](S x, S y) { return -x / (y * y); });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops.

namespace detail {

// back(x, fx) returns d out / d x.
template <typename S, typename Fwd, typename Back>
Var<S> unary_op(Var<S> a, Fwd fwd, Back back) {
  Tape<S>& tp = *a.tape;
  const Tensor<S>& va = a.val();
  Tensor<S> out(va.shape());
  for (Index i = 0; i < va.size(); ++i) out[i] = fwd(va[i]);
  const Index ia = a.id, io = tp.size();
  return tp.push(std::move(out), [ia, io, back](Tape<S>& t) {
    const Tensor<S>& g = t.grad(io);
    const Tensor<S>& x = t.value(ia);
    const Tensor<S>& fx = t.value(io);
    Tensor<S>& ga = t.grad(ia);
    for (Index i = 0; i < g.size(); ++i) ga[i] += g[i] * back(x[i], fx[i]);
  });
}

}  // namespace detail

template <typename S>
Var<S> neg(Var<S> a) {
  return detail::unary_op(
      a, [](S x) { return -x; }, [](S, S) { return S(-1); });
}

template <typename S>
Var<S> exp(Var<S> a) {
  return detail::unary_op(
      a, [](S x) { return std::exp(x); }, [](S, S fx) { return fx; });
}

template <typename S>
Var<S> log(Var<S> a) {
  return detail::unary_op(
      a, [](S x) { return std::log(x); }, [](S x, S) { return S(1) / x; });
}

template <typename S>
Var<S> sqrt(Var<S> a) {
  return detail::unary_op(
      a, [](S x) { return std::sqrt(x); },
      [](S, S fx) { return S(0.5) / fx; });
}

template <typename S>
Var<S> square(Var<S> a) {
  return detail::unary_op(
      a, [](S x) { return x * x; }, [](S x, S) { return S(2) * x; });
}

template <typename S>
Var<S> relu(Var<S> a) {
  return detail::unary_op(
      a, [](S x) { return x > S(0) ? x : S(0); },
      [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

template <typename S>
Var<S> tanh(Var<S> a) {
  return detail::unary_op(
      a, [](S x) { return std::tanh(x); },
      [](S, S fx) { return S(1) - fx * fx; });
}

template <typename S>
Var<S> sigmoid(Var<S> a) {
  return detail::unary_op(
      a, [](S x) { return S(1) / (S(1) + std::exp(-x)); },
      [](S, S fx) { return fx * (S(1) - fx); });
}

// Scalar convenience wrappers route through a constant leaf.
template <typename S>
Var<S> constant(Tape<S>& tp, Tensor<S> v) {
  return tp.leaf(std::move(v));
}

template <typename S>
Var<S> add(Var<S> a, S c) {
  return add(a, constant(*a.tape, Tensor<S>::scalar(c)));
}
template <typename S>
Var<S> mul(Var<S> a, S c) {
  return mul(a, constant(*a.tape, Tensor<S>::scalar(c)));
}

template <typename S>
Var<S> operator+(Var<S> a, Var<S> b) { return add(a, b); }
template <typename S>
Var<S> operator-(Var<S> a, Var<S> b) { return sub(a, b); }
template <typename S>
Var<S> operator*(Var<S> a, Var<S> b) { return mul(a, b); }
template <typename S>
Var<S> operator/(Var<S> a, Var<S> b) { return div(a, b); }

// Forward pass copy with no gradient path.
template <typename S>
Var<S> stop_gradient(Var<S> a) {
  return a.tape->leaf(a.val());
}

// ---------------------------------------------------------------------------
// Shape ops.

template <typename S>
Var<S> reshape(Var<S> a, Shape shape) {
  Tape<S>& tp = *a.tape;
  Tensor<S> out = a.val().reshaped(std::move(shape));
  const Index ia = a.id, io = tp.size();
  return tp.push(std::move(out), [ia, io](Tape<S>& t) {
    const Tensor<S>& g = t.grad(io);
    Tensor<S>& ga = t.grad(ia);
    ga.flat() += g.flat();
  });
}

namespace detail {

template <typename S>
Tensor<S> permute_tensor(const Tensor<S>& a, const std::vector<Index>& perm) {
  const Shape& as = a.shape();
  Shape os(as.size());
  for (std::size_t i = 0; i < perm.size(); ++i)
    os[i] = as[static_cast<std::size_t>(perm[i])];
  Tensor<S> out(os);
  const Shape ast = a.strides();
  Shape src_stride(as.size());
  for (std::size_t i = 0; i < perm.size(); ++i)
    src_stride[i] = ast[static_cast<std::size_t>(perm[i])];
  std::vector<Index> ix(as.size(), 0);
  Index isrc = 0;
  for (Index flat = 0; flat < out.size(); ++flat) {
    out[flat] = a[isrc];
    for (Index d = static_cast<Index>(os.size()) - 1; d >= 0; --d) {
      const std::size_t dd = static_cast<std::size_t>(d);
      ++ix[dd];
      isrc += src_stride[dd];
      if (ix[dd] < os[dd]) break;
      isrc -= src_stride[dd] * os[dd];
      ix[dd] = 0;
    }
  }
  return out;
}

}  // namespace detail

template <typename S>
Var<S> permute(Var<S> a, std::vector<Index> perm) {
  Tape<S>& tp = *a.tape;
  Tensor<S> out = detail::permute_tensor(a.val(), perm);
  std::vector<Index> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i)
    inv[static_cast<std::size_t>(perm[i])] = static_cast<Index>(i);
  const Index ia = a.id, io = tp.size();
  return tp.push(std::move(out), [ia, io, inv](Tape<S>& t) {
    Tensor<S> g = detail::permute_tensor(t.grad(io), inv);
    t.accum(ia, g);
  });
}

template <typename S>
Var<S> slice(Var<S> a, Index axis, Index start, Index len) {
  Tape<S>& tp = *a.tape;
  const Tensor<S>& va = a.val();
  const Shape& as = va.shape();
  Shape os = as;
  os[static_cast<std::size_t>(axis)] = len;
  Tensor<S> out(os);
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= as[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < as.size(); ++i)
    inner *= as[i];
  const Index adim = as[static_cast<std::size_t>(axis)];
  for (Index o = 0; o < outer; ++o)
    std::copy_n(va.data() + (o * adim + start) * inner, len * inner,
                out.data() + o * len * inner);
  const Index ia = a.id, io = tp.size();
  return tp.push(std::move(out),
                 [ia, io, axis, start, len, outer, inner, adim](Tape<S>& t) {
                   const Tensor<S>& g = t.grad(io);
                   Tensor<S>& ga = t.grad(ia);
                   for (Index o = 0; o < outer; ++o) {
                     const S* src = g.data() + o * len * inner;
                     S* dst = ga.data() + (o * adim + start) * inner;
                     for (Index i = 0; i < len * inner; ++i) dst[i] += src[i];
                   }
                 });
}

template <typename S>
Var<S> concat(const std::vector<Var<S>>& parts, Index axis) {
  Tape<S>& tp = *parts.front().tape;
  const Shape& s0 = parts.front().shape();
  Shape os = s0;
  Index total = 0;
  for (const Var<S>& p : parts) total += p.shape()[static_cast<std::size_t>(axis)];
  os[static_cast<std::size_t>(axis)] = total;
  Tensor<S> out(os);
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= s0[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s0.size(); ++i)
    inner *= s0[i];
  std::vector<Index> ids, lens;
  Index off = 0;
  for (const Var<S>& p : parts) {
    const Index len = p.shape()[static_cast<std::size_t>(axis)];
    const Tensor<S>& v = p.val();
    for (Index o = 0; o < outer; ++o)
      std::copy_n(v.data() + o * len * inner, len * inner,
                  out.data() + (o * total + off) * inner);
    ids.push_back(p.id);
    lens.push_back(len);
    off += len;
  }
  const Index io = tp.size();
  return tp.push(std::move(out),
                 [ids, lens, io, outer, inner, total](Tape<S>& t) {
                   const Tensor<S>& g = t.grad(io);
                   Index off = 0;
                   for (std::size_t k = 0; k < ids.size(); ++k) {
                     Tensor<S>& ga = t.grad(ids[k]);
                     const Index len = lens[k];
                     for (Index o = 0; o < outer; ++o) {
                       const S* src = g.data() + (o * total + off) * inner;
                       S* dst = ga.data() + o * len * inner;
                       for (Index i = 0; i < len * inner; ++i) dst[i] += src[i];
                     }
                     off += len;
                   }
                 });
}

// ---------------------------------------------------------------------------
// Reductions.

namespace detail {

inline Shape reduce_out_shape(const Shape& in, const std::vector<Index>& axes,
                              bool keepdims) {
  std::vector<bool> red(in.size(), false);
  for (const Index a : axes) red[static_cast<std::size_t>(a)] = true;
  Shape os;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (red[i]) {
      if (keepdims) os.push_back(1);
    } else {
      os.push_back(in[i]);
    }
  }
  return os;
}

// Map each input flat index to its output flat index under reduction.
inline Shape reduce_map_strides(const Shape& in,
                                const std::vector<Index>& axes) {
  std::vector<bool> red(in.size(), false);
  for (const Index a : axes) red[static_cast<std::size_t>(a)] = true;
  Shape st(in.size(), 0);
  Index stride = 1;
  for (Index i = static_cast<Index>(in.size()) - 1; i >= 0; --i) {
    const std::size_t ii = static_cast<std::size_t>(i);
    if (!red[ii]) {
      st[ii] = stride;
      stride *= in[ii];
    }
  }
  return st;
}

template <typename S, typename Acc>
void reduce_scatter(const Tensor<S>& in, const Shape& map_st, Acc&& acc) {
  const Shape& is = in.shape();
  const std::size_t rank = is.size();
  std::vector<Index> ix(rank, 0);
  Index io = 0;
  for (Index flat = 0; flat < in.size(); ++flat) {
    acc(io, flat);
    for (Index d = static_cast<Index>(rank) - 1; d >= 0; --d) {
      const std::size_t dd = static_cast<std::size_t>(d);
      ++ix[dd];
      io += map_st[dd];
      if (ix[dd] < is[dd]) break;
      io -= map_st[dd] * is[dd];
      ix[dd] = 0;
    }
  }
}

}  // namespace detail

template <typename S>
Var<S> sum(Var<S> a, const std::vector<Index>& axes, bool keepdims) {
  Tape<S>& tp = *a.tape;
  const Tensor<S>& va = a.val();
  Tensor<S> out(detail::reduce_out_shape(va.shape(), axes, keepdims));
  const Shape map_st = detail::reduce_map_strides(va.shape(), axes);
  detail::reduce_scatter(va, map_st,
                         [&](Index io, Index flat) { out[io] += va[flat]; });
  const Index ia = a.id, io = tp.size();
  return tp.push(std::move(out), [ia, io, map_st](Tape<S>& t) {
    const Tensor<S>& g = t.grad(io);
    const Tensor<S>& va = t.value(ia);
    Tensor<S>& ga = t.grad(ia);
    detail::reduce_scatter(
        va, map_st, [&](Index iout, Index flat) { ga[flat] += g[iout]; });
  });
}

template <typename S>
Var<S> sum(Var<S> a) {
  std::vector<Index> axes(a.shape().size());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<Index>(i);
  return sum(a, axes, false);
}

template <typename S>
Var<S> mean(Var<S> a, const std::vector<Index>& axes, bool keepdims) {
  Index count = 1;
  for (const Index ax : axes) count *= a.shape()[static_cast<std::size_t>(ax)];
  return mul(sum(a, axes, keepdims), S(1) / static_cast<S>(count));
}

template <typename S>
Var<S> mean(Var<S> a) {
  return mul(sum(a), S(1) / static_cast<S>(a.size()));
}

// Max over the given axes. Ties route gradient to the first maximizer in
// row-major order.
template <typename S>
Var<S> max(Var<S> a, const std::vector<Index>& axes, bool keepdims) {
  Tape<S>& tp = *a.tape;
  const Tensor<S>& va = a.val();
  Tensor<S> out = Tensor<S>::full(
      detail::reduce_out_shape(va.shape(), axes, keepdims),
      std::numeric_limits<S>::lowest());
  const Shape map_st = detail::reduce_map_strides(va.shape(), axes);
  auto argmax = std::make_shared<std::vector<Index>>(
      static_cast<std::size_t>(out.size()), Index(-1));
  detail::reduce_scatter(va, map_st, [&](Index io, Index flat) {
    if (va[flat] > out[io]) {
      out[io] = va[flat];
      (*argmax)[static_cast<std::size_t>(io)] = flat;
    }
  });
  const Index ia = a.id, io = tp.size();
  return tp.push(std::move(out), [ia, io, argmax](Tape<S>& t) {
    const Tensor<S>& g = t.grad(io);
    Tensor<S>& ga = t.grad(ia);
    for (Index i = 0; i < g.size(); ++i)
      ga[(*argmax)[static_cast<std::size_t>(i)]] += g[i];
  });
}

template <typename S>
Var<S> max_all(Var<S> a) {
  std::vector<Index> axes(a.shape().size());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<Index>(i);
  return max(a, axes, false);
}

// log(sum(exp(a))) over `axes`, stabilized by the running max. The gradient
// of the composition is exactly softmax(a) even with the max on the tape.
template <typename S>
Var<S> logsumexp(Var<S> a, const std::vector<Index>& axes, bool keepdims) {
  Var<S> m = max(a, axes, true);
  Var<S> s = sum(exp(sub(a, m)), axes, true);
  Var<S> out = add(log(s), m);
  if (!keepdims) {
    Shape os = detail::reduce_out_shape(a.shape(), axes, false);
    out = reshape(out, std::move(os));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix multiply, 2D only: (m,k) x (k,n) -> (m,n).

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Tape<S>& tp = *a.tape;
  const Tensor<S>& va = a.val();
  const Tensor<S>& vb = b.val();
  const Index m = va.dim(0), k = va.dim(1), n = vb.dim(1);
  if (vb.dim(0) != k)
    throw config_error("matmul inner dims " + shape_str(va.shape()) + " x " +
                       shape_str(vb.shape()));
  Tensor<S> out({m, n});
  out.mat(m, n).noalias() = va.mat(m, k) * vb.mat(k, n);
  const Index ia = a.id, ib = b.id, io = tp.size();
  return tp.push(std::move(out), [ia, ib, io, m, k, n](Tape<S>& t) {
    const Tensor<S>& g = t.grad(io);
    const Tensor<S>& va = t.value(ia);
    const Tensor<S>& vb = t.value(ib);
    t.grad(ia).mat(m, k).noalias() += g.mat(m, n) * vb.mat(k, n).transpose();
    t.grad(ib).mat(k, n).noalias() += va.mat(m, k).transpose() * g.mat(m, n);
  });
}

// ---------------------------------------------------------------------------
// Composite helpers.

// x / max(||x||_2, eps) along `axis`. Zero vectors map to zero.
template <typename S>
Var<S> l2_normalize(Var<S> a, Index axis, S eps = S(1e-8)) {
  Var<S> sq = sum(square(a), {axis}, true);
  Var<S> norm = sqrt(add(sq, eps * eps));
  return div(a, norm);
}

template <typename S>
Var<S> softmax(Var<S> a, Index axis) {
  Var<S> lse = logsumexp(a, {axis}, true);
  return exp(sub(a, lse));
}

}  // namespace avobj
