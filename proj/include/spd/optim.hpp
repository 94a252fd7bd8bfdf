// First-order optimizers. Both take parameters and gradients as parallel spans
// and update the parameters in place.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "spd/noise.hpp"  // ConfigError
#include "spd/tensor.hpp"

namespace spd {

template <typename T>
struct SgdState {
  double lr = 1e-3;
  double momentum = 0.0;
  double dampening = 0.0;
  double weight_decay = 0.0;
  bool nesterov = false;
  std::vector<Tensor<T>> velocity;  // lazily shaped on the first step

  void validate() const {
    if (!(lr >= 0.0)) throw ConfigError("sgd: lr must be nonnegative");
    if (momentum < 0.0) throw ConfigError("sgd: momentum must be nonnegative");
    if (dampening < 0.0 || dampening > 1.0) throw ConfigError("sgd: dampening must lie in [0,1]");
    if (weight_decay < 0.0) throw ConfigError("sgd: weight_decay must be nonnegative");
    if (nesterov && (momentum <= 0.0 || dampening != 0.0)) {
      throw ConfigError("sgd: nesterov requires momentum > 0 and dampening == 0");
    }
  }
};

template <typename T>
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;  // completed steps
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;

  void validate() const {
    if (!(lr >= 0.0)) throw ConfigError("adam: lr must be nonnegative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("adam: betas must lie in [0,1)");
    }
    if (!(eps > 0.0)) throw ConfigError("adam: eps must be positive");
  }
};

namespace detail {
template <typename T>
void check_aligned(std::span<Tensor<T>> params, std::span<const Tensor<T>> grads, std::vector<Tensor<T>>& slots,
                   const char* op) {
  if (params.size() != grads.size()) throw ShapeError(std::string(op) + ": parameter/gradient count mismatch");
  if (slots.empty()) {
    for (const auto& p : params) slots.emplace_back(p.shape());
  }
  if (slots.size() != params.size()) throw ShapeError(std::string(op) + ": optimizer state has wrong arity");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i].shape(), grads[i].shape(), op);
    require_same_shape(params[i].shape(), slots[i].shape(), op);
  }
}
}  // namespace detail

/// g <- grad + wd*p; v <- momentum*v + (1-dampening)*g;
/// d <- g + momentum*v (nesterov) or v; p <- p - lr*d.
template <typename T>
void sgd_step(std::span<Tensor<T>> params, std::span<const Tensor<T>> grads, SgdState<T>& state) {
  state.validate();
  detail::check_aligned(params, grads, state.velocity, "sgd_step");
  const T lr = static_cast<T>(state.lr), mu = static_cast<T>(state.momentum);
  const T damp = static_cast<T>(1.0 - state.dampening), wd = static_cast<T>(state.weight_decay);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& p = params[k];
    Tensor<T>& v = state.velocity[k];
    const Tensor<T>& grad = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T g = grad[i] + wd * p[i];
      v[i] = mu * v[i] + damp * g;
      const T d = state.nesterov ? g + mu * v[i] : v[i];
      p[i] -= lr * d;
    }
  }
}

/// Adam with bias correction; t is the post-increment step index (1 on the
/// first call).
template <typename T>
void adam_step(std::span<Tensor<T>> params, std::span<const Tensor<T>> grads, AdamState<T>& state) {
  state.validate();
  detail::check_aligned(params, grads, state.m, "adam_step");
  detail::check_aligned(params, grads, state.v, "adam_step");
  if (state.step == std::numeric_limits<std::uint64_t>::max()) throw std::overflow_error("adam_step: step counter overflow");
  const std::uint64_t t = ++state.step;
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(state.beta1, static_cast<double>(t)));
  const T c2 = static_cast<T>(1.0 - std::pow(state.beta2, static_cast<double>(t)));
  const T lr = static_cast<T>(state.lr), eps = static_cast<T>(state.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& p = params[k];
    Tensor<T>& m = state.m[k];
    Tensor<T>& v = state.v[k];
    const Tensor<T>& g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (T{1} - b1) * g[i];
      v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
      const T m_hat = m[i] / c1;
      const T v_hat = v[i] / c2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

/// Step decay: base_lr * 10^-floor(epoch / period).
double lr_schedule(std::size_t epoch, double base_lr, std::size_t period = 100);

}  // namespace spd
