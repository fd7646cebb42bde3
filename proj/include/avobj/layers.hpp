#pragma once

#include <map>
#include <string>

#include "avobj/conv.hpp"
#include "avobj/rng.hpp"

namespace avobj {

// Named parameter container. std::map keeps iteration order deterministic,
// which the optimizer and checkpoint writer rely on.
template <typename S>
struct ParamStore {
  std::map<std::string, Tensor<S>> params;  // trainable
  std::map<std::string, Tensor<S>> state;   // running statistics

  Tensor<S>& param(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw config_error("unknown parameter " + name);
    return it->second;
  }
  const Tensor<S>& param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw config_error("unknown parameter " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return params.count(name) != 0; }

  // Create-if-absent, used by model builders at init time.
  Tensor<S>& ensure(const std::string& name, Tensor<S> init) {
    auto it = params.find(name);
    if (it == params.end()) it = params.emplace(name, std::move(init)).first;
    return it->second;
  }
  Tensor<S>& ensure_state(const std::string& name, Tensor<S> init) {
    auto it = state.find(name);
    if (it == state.end()) it = state.emplace(name, std::move(init)).first;
    return it->second;
  }

  Index total_size() const {
    Index n = 0;
    for (const auto& [k, v] : params) n += v.size();
    return n;
  }

  template <typename T>
  ParamStore<T> cast() const {
    ParamStore<T> out;
    for (const auto& [k, v] : params) out.params.emplace(k, v.template cast<T>());
    for (const auto& [k, v] : state) out.state.emplace(k, v.template cast<T>());
    return out;
  }
};

// Bridges a ParamStore onto a tape for one forward/backward pass. Parameters
// are pushed as leaves on first use; grads() collects by name afterwards.
template <typename S>
struct Bound {
  Tape<S>& tape;
  ParamStore<S>& store;
  bool training;

  Bound(Tape<S>& t, ParamStore<S>& s, bool train = false)
      : tape(t), store(s), training(train) {}

  Var<S> p(const std::string& name) {
    auto it = vars_.find(name);
    if (it != vars_.end()) return it->second;
    Var<S> v = tape.leaf(store.param(name));
    vars_.emplace(name, v);
    return v;
  }

  std::map<std::string, Tensor<S>> grads() {
    std::map<std::string, Tensor<S>> out;
    for (const auto& [name, var] : vars_)
      if (tape.has_grad(var.id)) out.emplace(name, tape.grad(var.id));
    return out;
  }

 private:
  std::map<std::string, Var<S>> vars_;
};

// ---------------------------------------------------------------------------
// Initializers. All draws come from the caller's Rng in declaration order, so
// a fixed seed yields bit-identical models.

template <typename S>
Tensor<S> he_normal(Rng& rng, Shape shape, Index fan_in) {
  Tensor<S> t(std::move(shape));
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (Index i = 0; i < t.size(); ++i)
    t[i] = static_cast<S>(rng.normal(0.0, std));
  return t;
}

template <typename S>
Tensor<S> glorot_uniform(Rng& rng, Shape shape, Index fan_in, Index fan_out) {
  Tensor<S> t(std::move(shape));
  const double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (Index i = 0; i < t.size(); ++i)
    t[i] = static_cast<S>(rng.uniform(-lim, lim));
  return t;
}

// ---------------------------------------------------------------------------
// Fully connected: x (..., In) -> (..., Out). Weight (In, Out), bias (Out).

template <typename S>
Var<S> linear(Bound<S>& b, const std::string& prefix, Var<S> x) {
  Var<S> w = b.p(prefix + ".w");
  Var<S> bias = b.p(prefix + ".b");
  const Shape xs = x.shape();
  const Index in = xs.back();
  Index rows = 1;
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) rows *= xs[i];
  Var<S> y = matmul(reshape(x, {rows, in}), w);
  y = add(y, bias);
  Shape os = xs;
  os.back() = w.shape()[1];
  return reshape(y, std::move(os));
}

template <typename S>
void init_linear(ParamStore<S>& store, Rng& rng, const std::string& prefix,
                 Index in, Index out) {
  store.ensure(prefix + ".w", glorot_uniform<S>(rng, {in, out}, in, out));
  store.ensure(prefix + ".b", Tensor<S>({out}));
}

// ---------------------------------------------------------------------------
// Batch normalization over all axes except `channel_axis`, built from tape
// primitives so its gradient needs no special casing. Running statistics are
// updated as a side effect in training mode and are the normalizers in eval
// mode. Variance is the biased batch estimate.

template <typename S>
Var<S> batchnorm(Bound<S>& b, const std::string& prefix, Var<S> x,
                 Index channel_axis, S momentum = S(0.1), S eps = S(1e-5)) {
  const Shape& xs = x.shape();
  const Index C = xs[static_cast<std::size_t>(channel_axis)];
  Shape bshape(xs.size(), 1);
  bshape[static_cast<std::size_t>(channel_axis)] = C;

  std::vector<Index> axes;
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (static_cast<Index>(i) != channel_axis)
      axes.push_back(static_cast<Index>(i));

  Var<S> gamma = reshape(b.p(prefix + ".gamma"), bshape);
  Var<S> beta = reshape(b.p(prefix + ".beta"), bshape);

  Var<S> xn{};
  if (b.training) {
    Var<S> mu = mean(x, axes, true);
    Var<S> var = mean(square(sub(x, mu)), axes, true);
    xn = div(sub(x, mu), sqrt(add(var, eps)));
    Tensor<S>& rm = b.store.state.at(prefix + ".running_mean");
    Tensor<S>& rv = b.store.state.at(prefix + ".running_var");
    const Tensor<S>& mu_t = mu.val();
    const Tensor<S>& var_t = var.val();
    for (Index c = 0; c < C; ++c) {
      rm[c] = (S(1) - momentum) * rm[c] + momentum * mu_t[c];
      rv[c] = (S(1) - momentum) * rv[c] + momentum * var_t[c];
    }
  } else {
    Tape<S>& tp = b.tape;
    Var<S> rm = constant(tp, b.store.state.at(prefix + ".running_mean")
                                 .reshaped(bshape));
    Var<S> rv = constant(tp, b.store.state.at(prefix + ".running_var")
                                 .reshaped(bshape));
    xn = div(sub(x, rm), sqrt(add(rv, eps)));
  }
  return add(mul(xn, gamma), beta);
}

template <typename S>
void init_batchnorm(ParamStore<S>& store, const std::string& prefix,
                    Index channels) {
  store.ensure(prefix + ".gamma", Tensor<S>::full({channels}, S(1)));
  store.ensure(prefix + ".beta", Tensor<S>({channels}));
  store.ensure_state(prefix + ".running_mean", Tensor<S>({channels}));
  store.ensure_state(prefix + ".running_var",
                     Tensor<S>::full({channels}, S(1)));
}

// ---------------------------------------------------------------------------
// LSTM over x (T, B, In) -> (T, B, H). Gate order i, f, g, o. Zero initial
// state. Backprop through time falls out of the tape.

template <typename S>
Var<S> lstm(Bound<S>& b, const std::string& prefix, Var<S> x, Index hidden,
            bool reverse = false) {
  Var<S> w_ih = b.p(prefix + ".w_ih");
  Var<S> w_hh = b.p(prefix + ".w_hh");
  Var<S> bias = b.p(prefix + ".b");
  const Index T = x.shape()[0], B = x.shape()[1], In = x.shape()[2];
  const Index H = hidden;
  Tape<S>& tp = b.tape;

  Var<S> h = constant(tp, Tensor<S>({B, H}));
  Var<S> c = constant(tp, Tensor<S>({B, H}));
  std::vector<Var<S>> outs(static_cast<std::size_t>(T));
  for (Index step = 0; step < T; ++step) {
    const Index t = reverse ? T - 1 - step : step;
    Var<S> xt = reshape(slice(x, 0, t, 1), {B, In});
    Var<S> gates = add(add(matmul(xt, w_ih), matmul(h, w_hh)), bias);
    Var<S> i = sigmoid(slice(gates, 1, 0 * H, H));
    Var<S> f = sigmoid(slice(gates, 1, 1 * H, H));
    Var<S> g = tanh(slice(gates, 1, 2 * H, H));
    Var<S> o = sigmoid(slice(gates, 1, 3 * H, H));
    c = add(mul(f, c), mul(i, g));
    h = mul(o, tanh(c));
    outs[static_cast<std::size_t>(t)] = reshape(h, {Index(1), B, H});
  }
  return concat(outs, 0);
}

template <typename S>
Var<S> bilstm(Bound<S>& b, const std::string& prefix, Var<S> x, Index hidden) {
  Var<S> fwd = lstm(b, prefix + ".fwd", x, hidden, false);
  Var<S> bwd = lstm(b, prefix + ".bwd", x, hidden, true);
  return concat<S>({fwd, bwd}, 2);
}

template <typename S>
void init_lstm(ParamStore<S>& store, Rng& rng, const std::string& prefix,
               Index in, Index hidden) {
  store.ensure(prefix + ".w_ih",
               glorot_uniform<S>(rng, {in, 4 * hidden}, in, hidden));
  store.ensure(prefix + ".w_hh",
               glorot_uniform<S>(rng, {hidden, 4 * hidden}, hidden, hidden));
  Tensor<S> bias({4 * hidden});
  // Forget gate bias 1: standard remedy for vanishing memory early on.
  for (Index i = hidden; i < 2 * hidden; ++i) bias[i] = S(1);
  store.ensure(prefix + ".b", std::move(bias));
}

template <typename S>
void init_bilstm(ParamStore<S>& store, Rng& rng, const std::string& prefix,
                 Index in, Index hidden) {
  init_lstm(store, rng, prefix + ".fwd", in, hidden);
  init_lstm(store, rng, prefix + ".bwd", in, hidden);
}

}  // namespace avobj
