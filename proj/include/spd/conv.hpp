// Convolution kernels on plain tensors.
//
// conv2d is a cross-correlation: the kernel is NOT flipped. Padding is always
// zero padding. conv_transpose2d with kernel K is the exact linear adjoint of
// conv2d with the same K, stride and padding.
#pragma once

#include "spd/tensor.hpp"

namespace spd {

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// input [N,Cin,H,W], kernel [Cout,Cin,k,k], bias [Cout] -> [N,Cout,H',W'],
/// H' = floor((H + 2p - k) / stride) + 1. k must be odd.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, ConvGeometry g);

/// input [N,Cin,H,W], kernel [Cin,Cout,k,k], bias [Cout] -> [N,Cout,H'',W''],
/// H'' = (H - 1) * stride - 2p + k.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                           ConvGeometry g);

/// Gradients of conv2d given the upstream gradient. Null outputs are skipped;
/// non-null outputs are overwritten.
template <typename T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& grad_out,
                     ConvGeometry g, Tensor<T>* grad_input, Tensor<T>* grad_kernel, Tensor<T>* grad_bias);

template <typename T>
void conv_transpose2d_backward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& grad_out,
                               ConvGeometry g, Tensor<T>* grad_input, Tensor<T>* grad_kernel,
                               Tensor<T>* grad_bias);

}  // namespace spd
