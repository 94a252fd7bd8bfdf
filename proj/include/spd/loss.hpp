#pragma once

#include "spd/autograd.hpp"
#include "spd/noise.hpp"  // ConfigError

namespace spd {

/// Per-pixel weights of the asymmetric loss: alpha on clean pixels (map 0),
/// alpha + beta on noise pixels (map 1). The defaults weight a clean-pixel
/// error 1.1x an equal noise-pixel error.
struct PenaltyParams {
  double alpha = 1.1;
  double beta = -0.1;

  void validate() const;
  double clean_weight() const { return alpha; }
  double noise_weight() const { return alpha + beta; }
};

/// (1 / 2n) * sum (output - target)^2
template <typename T>
Var<T> fnorm_loss(Var<T> output, Var<T> target);

/// (1 / 2N) * sum (output - x)^2 * (alpha + beta * x), x in {0,1}.
/// Throws std::invalid_argument when the map holds any other value.
template <typename T>
Var<T> asymmetric_loss(Var<T> output, Var<T> target_map, const PenaltyParams& p);

// Value-only conveniences.
template <typename T>
T fnorm_loss(const Tensor<T>& output, const Tensor<T>& target);
template <typename T>
T asymmetric_loss(const Tensor<T>& output, const Tensor<T>& target_map, const PenaltyParams& p);

}  // namespace spd
