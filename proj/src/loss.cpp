#include "spd/loss.hpp"

#include "spd/noise.hpp"

namespace spd {

void PenaltyParams::validate() const {
  if (!(alpha > 0.0)) throw ConfigError("penalty alpha must be positive");
  if (!(alpha + beta > 0.0)) throw ConfigError("penalty alpha + beta must be positive");
}

template <typename T>
Var<T> fnorm_loss(Var<T> output, Var<T> target) {
  require_same_shape(output.shape(), target.shape(), "fnorm_loss");
  const T n = static_cast<T>(output.value().size());
  if (n == T{0}) throw ShapeError("fnorm_loss: empty tensors");
  return mul_scalar(sum(square(sub(output, target))), T{1} / (T{2} * n));
}

template <typename T>
Var<T> asymmetric_loss(Var<T> output, Var<T> target_map, const PenaltyParams& p) {
  p.validate();
  require_same_shape(output.shape(), target_map.shape(), "asymmetric_loss");
  const Tensor<T>& x = target_map.value();
  Tensor<T> weights(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] != T{0} && x[i] != T{1}) {
      throw std::invalid_argument("asymmetric_loss: noise map values must be 0 or 1");
    }
    weights[i] = static_cast<T>(p.alpha + p.beta * static_cast<double>(x[i]));
  }
  const T n = static_cast<T>(x.size());
  Var<T> w = output.tape->constant(std::move(weights));
  return mul_scalar(sum(mul(square(sub(output, target_map)), w)), T{1} / (T{2} * n));
}

template <typename T>
T fnorm_loss(const Tensor<T>& output, const Tensor<T>& target) {
  Tape<T> tape;
  return fnorm_loss(tape.constant(output), tape.constant(target)).value().item();
}

template <typename T>
T asymmetric_loss(const Tensor<T>& output, const Tensor<T>& target_map, const PenaltyParams& p) {
  Tape<T> tape;
  return asymmetric_loss(tape.constant(output), tape.constant(target_map), p).value().item();
}

template Var<float> fnorm_loss(Var<float>, Var<float>);
template Var<double> fnorm_loss(Var<double>, Var<double>);
template Var<float> asymmetric_loss(Var<float>, Var<float>, const PenaltyParams&);
template Var<double> asymmetric_loss(Var<double>, Var<double>, const PenaltyParams&);
template float fnorm_loss(const Tensor<float>&, const Tensor<float>&);
template double fnorm_loss(const Tensor<double>&, const Tensor<double>&);
template float asymmetric_loss(const Tensor<float>&, const Tensor<float>&, const PenaltyParams&);
template double asymmetric_loss(const Tensor<double>&, const Tensor<double>&, const PenaltyParams&);

}  // namespace spd
