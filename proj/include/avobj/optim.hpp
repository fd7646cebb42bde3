#pragma once

#include <map>
#include <string>

#include "avobj/layers.hpp"

namespace avobj {

// Optimizers update only the parameters that received gradients, so params
// kept off the tape (frozen stages) are untouched bit for bit.

template <typename S>
void check_grads_finite(const std::map<std::string, Tensor<S>>& grads,
                        Index step) {
  for (const auto& [name, g] : grads)
    if (!g.all_finite())
      throw numeric_error("non-finite gradient for " + name + " at step " +
                          std::to_string(step));
}

// Scale all gradients so their global l2 norm is at most max_norm.
template <typename S>
void clip_grad_norm(std::map<std::string, Tensor<S>>& grads, S max_norm) {
  double sq = 0;
  for (const auto& [name, g] : grads)
    sq += static_cast<double>(g.flat().squaredNorm());
  const double norm = std::sqrt(sq);
  if (norm <= static_cast<double>(max_norm) || norm == 0) return;
  const S scale = static_cast<S>(static_cast<double>(max_norm) / norm);
  for (auto& [name, g] : grads) g.flat() *= scale;
}

template <typename S>
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(ParamStore<S>& store,
                    const std::map<std::string, Tensor<S>>& grads) = 0;
  virtual void set_lr(S lr) = 0;
};

template <typename S>
class Sgd : public Optimizer<S> {
 public:
  Sgd(S lr, S momentum = S(0.9), S weight_decay = S(0))
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  void step(ParamStore<S>& store,
            const std::map<std::string, Tensor<S>>& grads) override {
    ++step_;
    check_grads_finite(grads, step_);
    for (const auto& [name, g] : grads) {
      Tensor<S>& p = store.param(name);
      auto it = vel_.find(name);
      if (it == vel_.end())
        it = vel_.emplace(name, Tensor<S>(p.shape())).first;
      Tensor<S>& v = it->second;
      for (Index i = 0; i < p.size(); ++i) {
        const S grad = g[i] + weight_decay_ * p[i];
        v[i] = momentum_ * v[i] + grad;
        p[i] -= lr_ * v[i];
      }
    }
  }

  void set_lr(S lr) override { lr_ = lr; }

 private:
  S lr_, momentum_, weight_decay_;
  Index step_ = 0;
  std::map<std::string, Tensor<S>> vel_;
};

template <typename S>
class Adam : public Optimizer<S> {
 public:
  Adam(S lr, S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8),
       S weight_decay = S(0))
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void step(ParamStore<S>& store,
            const std::map<std::string, Tensor<S>>& grads) override {
    ++step_;
    check_grads_finite(grads, step_);
    const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(b1_), step_));
    const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(b2_), step_));
    for (const auto& [name, g] : grads) {
      Tensor<S>& p = store.param(name);
      auto it = m_.find(name);
      if (it == m_.end()) {
        m_.emplace(name, Tensor<S>(p.shape()));
        v_.emplace(name, Tensor<S>(p.shape()));
      }
      Tensor<S>& m = m_.at(name);
      Tensor<S>& v = v_.at(name);
      for (Index i = 0; i < p.size(); ++i) {
        const S grad = g[i] + weight_decay_ * p[i];
        m[i] = b1_ * m[i] + (S(1) - b1_) * grad;
        v[i] = b2_ * v[i] + (S(1) - b2_) * grad * grad;
        const S mh = m[i] / bc1;
        const S vh = v[i] / bc2;
        p[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
      }
    }
  }

  void set_lr(S lr) override { lr_ = lr; }

 private:
  S lr_, b1_, b2_, eps_, weight_decay_;
  Index step_ = 0;
  std::map<std::string, Tensor<S>> m_, v_;
};

}  // namespace avobj
