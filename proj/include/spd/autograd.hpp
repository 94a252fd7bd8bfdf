// Reverse-mode differentiation over a recorded tape of primitive ops.
//
// Every op appends one node holding its output value and a closure that pushes
// the node's gradient to its inputs. backward() replays the closures in reverse
// recording order. A Var is a handle into the tape that created it and must not
// outlive it.
#pragma once

#include <functional>
#include <span>
#include <vector>

#include "spd/conv.hpp"
#include "spd/tensor.hpp"

namespace spd {

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  /// A leaf that gradients are tracked for.
  Var<T> variable(Tensor<T> value);
  /// A leaf treated as a constant.
  Var<T> constant(Tensor<T> value);

  /// Records an op output. `backward` is dropped when no input needs a gradient.
  Var<T> record(Tensor<T> value, std::vector<Var<T>> inputs, Backward backward);

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient accumulator of a node during backward(), or null when the node
  /// needs none. Allocated zero-filled on first use.
  Tensor<T>* grad_slot(Var<T> v);

  /// Gradients of the single-element `output` with respect to each of `wrt`,
  /// each shaped like its variable. Throws ShapeError for a non-scalar output.
  std::vector<Tensor<T>> backward(Var<T> output, std::span<const Var<T>> wrt);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
  std::vector<bool> has_grad_;
};

// Primitive ops. Elementwise binary ops require equal shapes.
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, Var<T> bias, ConvGeometry g);
template <typename T>
Var<T> conv_transpose2d(Var<T> input, Var<T> kernel, Var<T> bias, ConvGeometry g);
template <typename T>
Var<T> relu(Var<T> x);
template <typename T>
Var<T> sigmoid(Var<T> x);
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul_scalar(Var<T> x, T s);
template <typename T>
Var<T> square(Var<T> x);
template <typename T>
Var<T> sum(Var<T> x);
template <typename T>
Var<T> mean(Var<T> x);
/// [N,C1,H,W] ++ [N,C2,H,W] -> [N,C1+C2,H,W]
template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b);

}  // namespace spd
