#include "spd/autograd.hpp"

#include <algorithm>
#include <cmath>

namespace spd {
namespace {

template <typename T>
void accumulate(Tensor<T>* slot, const Tensor<T>& g) {
  if (!slot) return;
  for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
}

template <typename T, typename F>
Tensor<T> map(const Tensor<T>& x, F f) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

template <typename T>
Tape<T>& same_tape(Var<T> a, Var<T> b, const char* op) {
  if (a.tape != b.tape || a.tape == nullptr) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
  return *a.tape;
}

}  // namespace

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), true, {}});
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), false, {}});
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::vector<Var<T>> inputs, Backward backward) {
  const bool needs = std::any_of(inputs.begin(), inputs.end(), [&](Var<T> v) { return requires_grad(v); });
  nodes_.push_back(Node{std::move(value), needs, needs ? std::move(backward) : Backward{}});
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Tensor<T>* Tape<T>::grad_slot(Var<T> v) {
  if (!nodes_.at(v.id).requires_grad) return nullptr;
  if (!has_grad_[v.id]) {
    grads_[v.id] = Tensor<T>(nodes_[v.id].value.shape());
    has_grad_[v.id] = true;
  }
  return &grads_[v.id];
}

template <typename T>
std::vector<Tensor<T>> Tape<T>::backward(Var<T> output, std::span<const Var<T>> wrt) {
  if (value(output).size() != 1) {
    throw ShapeError("backward: output must be a scalar, got shape " + to_string(value(output).shape()));
  }
  grads_.assign(nodes_.size(), Tensor<T>{});
  has_grad_.assign(nodes_.size(), false);
  if (Tensor<T>* seed = grad_slot(output)) (*seed)[0] = T{1};
  for (std::size_t i = output.id + 1; i-- > 0;) {
    if (has_grad_[i] && nodes_[i].backward) nodes_[i].backward(*this, grads_[i]);
  }
  std::vector<Tensor<T>> result;
  result.reserve(wrt.size());
  for (Var<T> v : wrt) {
    result.push_back(has_grad_[v.id] ? std::move(grads_[v.id]) : Tensor<T>(value(v).shape()));
    has_grad_[v.id] = false;
  }
  grads_.clear();
  has_grad_.clear();
  return result;
}

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, Var<T> bias, ConvGeometry g) {
  Tape<T>& tape = same_tape(input, kernel, "conv2d");
  same_tape(input, bias, "conv2d");
  return tape.record(conv2d(input.value(), kernel.value(), bias.value(), g), {input, kernel, bias},
                     [=](Tape<T>& t, const Tensor<T>& gy) {
                       Tensor<T>* sx = t.grad_slot(input);
                       Tensor<T>* sk = t.grad_slot(kernel);
                       Tensor<T>* sb = t.grad_slot(bias);
                       Tensor<T> gx, gk, gb;
                       conv2d_backward(t.value(input), t.value(kernel), gy, g, sx ? &gx : nullptr,
                                       sk ? &gk : nullptr, sb ? &gb : nullptr);
                       if (sx) accumulate(sx, gx);
                       if (sk) accumulate(sk, gk);
                       if (sb) accumulate(sb, gb);
                     });
}

template <typename T>
Var<T> conv_transpose2d(Var<T> input, Var<T> kernel, Var<T> bias, ConvGeometry g) {
  Tape<T>& tape = same_tape(input, kernel, "conv_transpose2d");
  same_tape(input, bias, "conv_transpose2d");
  return tape.record(conv_transpose2d(input.value(), kernel.value(), bias.value(), g), {input, kernel, bias},
                     [=](Tape<T>& t, const Tensor<T>& gy) {
                       Tensor<T>* sx = t.grad_slot(input);
                       Tensor<T>* sk = t.grad_slot(kernel);
                       Tensor<T>* sb = t.grad_slot(bias);
                       Tensor<T> gx, gk, gb;
                       conv_transpose2d_backward(t.value(input), t.value(kernel), gy, g, sx ? &gx : nullptr,
                                                 sk ? &gk : nullptr, sb ? &gb : nullptr);
                       if (sx) accumulate(sx, gx);
                       if (sk) accumulate(sk, gk);
                       if (sb) accumulate(sb, gb);
                     });
}

template <typename T>
Var<T> relu(Var<T> x) {
  return x.tape->record(map(x.value(), [](T v) { return v > T{0} ? v : T{0}; }), {x},
                        [=](Tape<T>& t, const Tensor<T>& gy) {
                          Tensor<T>* s = t.grad_slot(x);
                          const Tensor<T>& xv = t.value(x);
                          for (std::size_t i = 0; i < gy.size(); ++i) {
                            if (xv[i] > T{0}) (*s)[i] += gy[i];
                          }
                        });
}

template <typename T>
T logistic(T v) {
  // Split by sign so neither branch overflows.
  if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
  const T e = std::exp(v);
  return e / (T{1} + e);
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return x.tape->record(map(x.value(), logistic<T>), {x}, [=](Tape<T>& t, const Tensor<T>& gy) {
    Tensor<T>* s = t.grad_slot(x);
    const Tensor<T>& xv = t.value(x);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      const T y = logistic(xv[i]);
      (*s)[i] += gy[i] * y * (T{1} - y);
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape(a, b, "add");
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return tape.record(std::move(out), {a, b}, [=](Tape<T>& t, const Tensor<T>& gy) {
    accumulate(t.grad_slot(a), gy);
    accumulate(t.grad_slot(b), gy);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape(a, b, "sub");
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return tape.record(std::move(out), {a, b}, [=](Tape<T>& t, const Tensor<T>& gy) {
    accumulate(t.grad_slot(a), gy);
    if (Tensor<T>* s = t.grad_slot(b)) {
      for (std::size_t i = 0; i < gy.size(); ++i) (*s)[i] -= gy[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape(a, b, "mul");
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return tape.record(std::move(out), {a, b}, [=](Tape<T>& t, const Tensor<T>& gy) {
    if (Tensor<T>* s = t.grad_slot(a)) {
      const Tensor<T>& bv = t.value(b);
      for (std::size_t i = 0; i < gy.size(); ++i) (*s)[i] += gy[i] * bv[i];
    }
    if (Tensor<T>* s = t.grad_slot(b)) {
      const Tensor<T>& av = t.value(a);
      for (std::size_t i = 0; i < gy.size(); ++i) (*s)[i] += gy[i] * av[i];
    }
  });
}

template <typename T>
Var<T> mul_scalar(Var<T> x, T s) {
  return x.tape->record(map(x.value(), [s](T v) { return v * s; }), {x}, [=](Tape<T>& t, const Tensor<T>& gy) {
    Tensor<T>* slot = t.grad_slot(x);
    for (std::size_t i = 0; i < gy.size(); ++i) (*slot)[i] += gy[i] * s;
  });
}

template <typename T>
Var<T> square(Var<T> x) {
  return x.tape->record(map(x.value(), [](T v) { return v * v; }), {x}, [=](Tape<T>& t, const Tensor<T>& gy) {
    Tensor<T>* s = t.grad_slot(x);
    const Tensor<T>& xv = t.value(x);
    for (std::size_t i = 0; i < gy.size(); ++i) (*s)[i] += T{2} * xv[i] * gy[i];
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T acc{0};
  for (T v : x.value().data()) acc += v;
  return x.tape->record(Tensor<T>::scalar(acc), {x}, [=](Tape<T>& t, const Tensor<T>& gy) {
    Tensor<T>* s = t.grad_slot(x);
    for (std::size_t i = 0; i < s->size(); ++i) (*s)[i] += gy[0];
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  const T n = static_cast<T>(x.value().size());
  T acc{0};
  for (T v : x.value().data()) acc += v;
  return x.tape->record(Tensor<T>::scalar(acc / n), {x}, [=](Tape<T>& t, const Tensor<T>& gy) {
    Tensor<T>* s = t.grad_slot(x);
    for (std::size_t i = 0; i < s->size(); ++i) (*s)[i] += gy[0] / n;
  });
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape(a, b, "concat_channels");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  require_rank4(sa, "concat_channels");
  require_rank4(sb, "concat_channels");
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3]) {
    throw ShapeError("concat_channels: batch/spatial mismatch " + to_string(sa) + " vs " + to_string(sb));
  }
  const std::size_t plane = sa[2] * sa[3];
  const std::size_t ca = sa[1] * plane, cb = sb[1] * plane;
  Tensor<T> out(Shape{sa[0], sa[1] + sb[1], sa[2], sa[3]});
  for (std::size_t n = 0; n < sa[0]; ++n) {
    std::copy_n(a.value().data().begin() + n * ca, ca, out.data().begin() + n * (ca + cb));
    std::copy_n(b.value().data().begin() + n * cb, cb, out.data().begin() + n * (ca + cb) + ca);
  }
  return tape.record(std::move(out), {a, b}, [=](Tape<T>& t, const Tensor<T>& gy) {
    Tensor<T>* s_a = t.grad_slot(a);
    Tensor<T>* s_b = t.grad_slot(b);
    for (std::size_t n = 0; n < sa[0]; ++n) {
      const T* src = gy.data().data() + n * (ca + cb);
      if (s_a) {
        for (std::size_t i = 0; i < ca; ++i) (*s_a)[n * ca + i] += src[i];
      }
      if (s_b) {
        for (std::size_t i = 0; i < cb; ++i) (*s_b)[n * cb + i] += src[ca + i];
      }
    }
  });
}

#define SPD_INSTANTIATE_AUTOGRAD(T)                                     \
  template class Tape<T>;                                               \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, ConvGeometry);         \
  template Var<T> conv_transpose2d(Var<T>, Var<T>, Var<T>, ConvGeometry); \
  template Var<T> relu(Var<T>);                                         \
  template Var<T> sigmoid(Var<T>);                                      \
  template Var<T> add(Var<T>, Var<T>);                                  \
  template Var<T> sub(Var<T>, Var<T>);                                  \
  template Var<T> mul(Var<T>, Var<T>);                                  \
  template Var<T> mul_scalar(Var<T>, T);                                \
  template Var<T> square(Var<T>);                                       \
  template Var<T> sum(Var<T>);                                          \
  template Var<T> mean(Var<T>);                                         \
  template Var<T> concat_channels(Var<T>, Var<T>);

SPD_INSTANTIATE_AUTOGRAD(float)
SPD_INSTANTIATE_AUTOGRAD(double)

#undef SPD_INSTANTIATE_AUTOGRAD

}  // namespace spd
