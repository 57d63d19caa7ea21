#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "hodiff/autodiff.hpp"
#include "hodiff/rng.hpp"
#include "hodiff/tensor.hpp"

namespace hodiff {

/// Named parameter tensors with a stable registration order (checkpoints and
/// optimizer state key off the names).
template <typename S>
struct ParamStore {
  std::vector<std::string> order;
  std::unordered_map<std::string, Tensor<S>> tensors;

  Tensor<S>& add(const std::string& name, Tensor<S> t) {
    if (tensors.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    order.push_back(name);
    return tensors.emplace(name, std::move(t)).first->second;
  }
  Tensor<S>& get(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }
  const Tensor<S>& get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }
  size_t total_size() const {
    size_t n = 0;
    for (const auto& name : order) n += tensors.at(name).size();
    return n;
  }
  bool all_finite() const {
    for (const auto& name : order)
      if (!tensors.at(name).all_finite()) return false;
    return true;
  }
  template <typename T>
  ParamStore<T> cast() const {
    ParamStore<T> out;
    for (const auto& name : order) out.add(name, tensors.at(name).template cast<T>());
    return out;
  }
};

/// Per-graph binding of every parameter as a differentiable leaf.
template <typename S>
struct BoundParams {
  std::unordered_map<std::string, typename Graph<S>::Var> vars;

  typename Graph<S>::Var at(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw std::out_of_range("unbound parameter: " + name);
    return it->second;
  }
};

template <typename S>
BoundParams<S> bind_params(Graph<S>& g, const ParamStore<S>& store, bool trainable = true,
                           const std::function<bool(const std::string&)>& filter = nullptr) {
  BoundParams<S> bound;
  for (const auto& name : store.order) {
    if (filter && !filter(name)) continue;
    bound.vars.emplace(name, g.leaf(store.tensors.at(name), trainable));
  }
  return bound;
}

/// Gradient accumulator keyed like the store. Accumulation happens in sample
/// order so batched runs stay bit-deterministic.
template <typename S>
struct GradAccum {
  std::unordered_map<std::string, Tensor<S>> grads;

  void add_from(const Graph<S>& g, const ParamStore<S>& store, const BoundParams<S>& bound) {
    for (const auto& name : store.order) {
      auto bit = bound.vars.find(name);
      if (bit == bound.vars.end()) continue;  // parameter not used by this graph
      const Tensor<S>& gt = g.grad(bit->second);
      auto it = grads.find(name);
      if (it == grads.end()) {
        grads.emplace(name, gt);
      } else {
        for (size_t i = 0; i < gt.size(); ++i) it->second.data[i] += gt.data[i];
      }
    }
  }
  void scale(S c) {
    for (auto& [_, g] : grads)
      for (S& v : g.data) v *= c;
  }
};

// -- initializers -----------------------------------------------------------

template <typename S>
void add_linear(ParamStore<S>& p, const std::string& name, int in, int out, Rng& rng) {
  const S std_dev = static_cast<S>(std::sqrt(2.0 / in));
  p.add(name + ".w", Tensor<S>::randn({in, out}, rng, std_dev));
  p.add(name + ".b", Tensor<S>({1, out}));
}

template <typename S>
void add_conv(ParamStore<S>& p, const std::string& name, int kh, int kw, int cin, int cout,
              Rng& rng) {
  const S std_dev = static_cast<S>(std::sqrt(2.0 / (kh * kw * cin)));
  p.add(name + ".w", Tensor<S>::randn({kh, kw, cin, cout}, rng, std_dev));
  p.add(name + ".b", Tensor<S>({1, cout}));
}

// -- graph builders ----------------------------------------------------------

template <typename S>
typename Graph<S>::Var linear(Graph<S>& g, const BoundParams<S>& p, const std::string& name,
                              typename Graph<S>::Var x) {
  return g.add_rowvec(g.matmul(x, p.at(name + ".w")), p.at(name + ".b"));
}

template <typename S>
typename Graph<S>::Var linear_silu(Graph<S>& g, const BoundParams<S>& p, const std::string& name,
                                   typename Graph<S>::Var x) {
  return g.silu(linear(g, p, name, x));
}

template <typename S>
typename Graph<S>::Var conv_silu(Graph<S>& g, const BoundParams<S>& p, const std::string& name,
                                 typename Graph<S>::Var x, int stride) {
  return g.silu(g.conv2d(x, p.at(name + ".w"), p.at(name + ".b"), stride));
}

/// Sinusoidal embedding of an integer timestep, 1 x dim (dim even).
template <typename S>
Tensor<S> time_embedding(int t, int dim) {
  if (dim % 2 != 0) throw std::invalid_argument("time embedding dim must be even");
  Tensor<S> out({1, dim});
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
    out.at(0, i) = static_cast<S>(std::sin(t * freq));
    out.at(0, half + i) = static_cast<S>(std::cos(t * freq));
  }
  return out;
}

// -- optimizer ---------------------------------------------------------------

/// Adam with bias correction; state is keyed by parameter name.
template <typename S>
class AdamOptimizer {
 public:
  explicit AdamOptimizer(S lr, S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore<S>& params, const std::unordered_map<std::string, Tensor<S>>& grads) {
    ++t_;
    const S bc1 = S(1) - static_cast<S>(std::pow(double(beta1_), t_));
    const S bc2 = S(1) - static_cast<S>(std::pow(double(beta2_), t_));
    for (const auto& name : params.order) {
      auto git = grads.find(name);
      if (git == grads.end()) continue;
      Tensor<S>& p = params.get(name);
      const Tensor<S>& g = git->second;
      Tensor<S>& m = state(m_, name, p);
      Tensor<S>& v = state(v_, name, p);
      for (size_t i = 0; i < p.size(); ++i) {
        m.data[i] = beta1_ * m.data[i] + (S(1) - beta1_) * g.data[i];
        v.data[i] = beta2_ * v.data[i] + (S(1) - beta2_) * g.data[i] * g.data[i];
        const S mhat = m.data[i] / bc1;
        const S vhat = v.data[i] / bc2;
        p.data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void set_lr(S lr) { lr_ = lr; }
  S lr() const { return lr_; }
  int steps_taken() const { return t_; }

 private:
  S lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::unordered_map<std::string, Tensor<S>> m_, v_;

  Tensor<S>& state(std::unordered_map<std::string, Tensor<S>>& slot, const std::string& name,
                   const Tensor<S>& like) {
    auto it = slot.find(name);
    if (it == slot.end()) it = slot.emplace(name, Tensor<S>(like.dims)).first;
    return it->second;
  }
};

}  // namespace hodiff
