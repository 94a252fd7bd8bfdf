#include "spd/conv.hpp"

#include <Eigen/Core>

#include "spd/parallel.hpp"

namespace spd {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Patch layout shared by both directions: `image` is C x ih x iw, `grid` is the
// oh x ow lattice of kernel placements. Row (c*k + ki)*k + kj, column oh*ow_n + ow.
struct Patches {
  std::size_t channels, ih, iw, oh, ow, k, stride, pad;
  std::size_t rows() const { return channels * k * k; }
  std::size_t cols() const { return oh * ow; }
};

template <typename T>
void im2col(const T* image, const Patches& p, T* col) {
  for (std::size_t c = 0; c < p.channels; ++c) {
    for (std::size_t ki = 0; ki < p.k; ++ki) {
      for (std::size_t kj = 0; kj < p.k; ++kj) {
        T* row = col + ((c * p.k + ki) * p.k + kj) * p.cols();
        for (std::size_t y = 0; y < p.oh; ++y) {
          const auto iy = static_cast<std::ptrdiff_t>(y * p.stride + ki) - static_cast<std::ptrdiff_t>(p.pad);
          T* out = row + y * p.ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(p.ih)) {
            std::fill(out, out + p.ow, T{0});
            continue;
          }
          const T* src = image + (c * p.ih + static_cast<std::size_t>(iy)) * p.iw;
          for (std::size_t x = 0; x < p.ow; ++x) {
            const auto ix = static_cast<std::ptrdiff_t>(x * p.stride + kj) - static_cast<std::ptrdiff_t>(p.pad);
            out[x] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(p.iw)) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add the columns back into a zeroed image.
template <typename T>
void col2im(const T* col, const Patches& p, T* image) {
  std::fill(image, image + p.channels * p.ih * p.iw, T{0});
  for (std::size_t c = 0; c < p.channels; ++c) {
    for (std::size_t ki = 0; ki < p.k; ++ki) {
      for (std::size_t kj = 0; kj < p.k; ++kj) {
        const T* row = col + ((c * p.k + ki) * p.k + kj) * p.cols();
        for (std::size_t y = 0; y < p.oh; ++y) {
          const auto iy = static_cast<std::ptrdiff_t>(y * p.stride + ki) - static_cast<std::ptrdiff_t>(p.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(p.ih)) continue;
          T* dst = image + (c * p.ih + static_cast<std::size_t>(iy)) * p.iw;
          const T* in = row + y * p.ow;
          for (std::size_t x = 0; x < p.ow; ++x) {
            const auto ix = static_cast<std::ptrdiff_t>(x * p.stride + kj) - static_cast<std::ptrdiff_t>(p.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(p.iw)) dst[ix] += in[x];
          }
        }
      }
    }
  }
}

void check_kernel(const Shape& input, const Shape& kernel, const Shape& bias, std::size_t in_axis,
                  std::size_t out_axis, const char* op) {
  require_rank4(input, op);
  require_rank4(kernel, op);
  if (kernel[2] != kernel[3]) {
    throw ShapeError(std::string(op) + ": kernel must be square, got " + to_string(kernel));
  }
  if (kernel[in_axis] != input[1]) {
    throw ShapeError(std::string(op) + ": input has " + std::to_string(input[1]) + " channels but kernel " +
                     to_string(kernel) + " expects " + std::to_string(kernel[in_axis]));
  }
  if (bias.size() != 1 || bias[0] != kernel[out_axis]) {
    throw ShapeError(std::string(op) + ": bias shape " + to_string(bias) + " does not match " +
                     std::to_string(kernel[out_axis]) + " output channels");
  }
}

Patches conv_patches(const Shape& input, const Shape& kernel, ConvGeometry g) {
  if (g.stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  const std::size_t k = kernel[2];
  if (k % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd, got " + std::to_string(k));
  if (input[2] + 2 * g.padding < k || input[3] + 2 * g.padding < k) {
    throw ShapeError("conv2d: padded input " + to_string(input) + " is smaller than kernel " + std::to_string(k));
  }
  return Patches{input[1], input[2], input[3], (input[2] + 2 * g.padding - k) / g.stride + 1,
                 (input[3] + 2 * g.padding - k) / g.stride + 1, k, g.stride, g.padding};
}

// Geometry of the transposed op expressed as the conv2d it is the adjoint of:
// the "image" is the transposed output, the "grid" is the transposed input.
Patches transpose_patches(const Shape& input, const Shape& kernel, ConvGeometry g) {
  if (g.stride == 0) throw std::invalid_argument("conv_transpose2d: stride must be positive");
  const std::size_t k = kernel[2];
  const auto extent = [&](std::size_t n) {
    const auto v = static_cast<std::ptrdiff_t>((n - 1) * g.stride + k) - 2 * static_cast<std::ptrdiff_t>(g.padding);
    if (v <= 0) throw ShapeError("conv_transpose2d: padding too large for input " + to_string(input));
    return static_cast<std::size_t>(v);
  };
  return Patches{kernel[1], extent(input[2]), extent(input[3]), input[2], input[3], k, g.stride, g.padding};
}

template <typename T>
void sum_in_order(const std::vector<Tensor<T>>& parts, Tensor<T>& out) {
  std::fill(out.data().begin(), out.data().end(), T{0});
  for (const auto& part : parts) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += part[i];
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, ConvGeometry g) {
  check_kernel(input.shape(), kernel.shape(), bias.shape(), 1, 0, "conv2d");
  const Patches p = conv_patches(input.shape(), kernel.shape(), g);
  const std::size_t batch = input.dim(0), cout = kernel.dim(0);
  Tensor<T> out(Shape{batch, cout, p.oh, p.ow});
  const ConstMatMap<T> w(kernel.data().data(), cout, p.rows());
  parallel_for(batch, [&](std::size_t n) {
    std::vector<T> col(p.rows() * p.cols());
    im2col(input.data().data() + n * p.channels * p.ih * p.iw, p, col.data());
    MatMap<T> y(out.data().data() + n * cout * p.cols(), cout, p.cols());
    y.noalias() = w * ConstMatMap<T>(col.data(), p.rows(), p.cols());
    for (std::size_t c = 0; c < cout; ++c) y.row(c).array() += bias[c];
  });
  return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& grad_out,
                     ConvGeometry g, Tensor<T>* grad_input, Tensor<T>* grad_kernel, Tensor<T>* grad_bias) {
  const Patches p = conv_patches(input.shape(), kernel.shape(), g);
  const std::size_t batch = input.dim(0), cout = kernel.dim(0);
  require_same_shape(grad_out.shape(), Shape{batch, cout, p.oh, p.ow}, "conv2d_backward");
  const ConstMatMap<T> w(kernel.data().data(), cout, p.rows());
  if (grad_input) *grad_input = Tensor<T>(input.shape());
  std::vector<Tensor<T>> kernel_parts(grad_kernel ? batch : 0);
  parallel_for(batch, [&](std::size_t n) {
    const ConstMatMap<T> gy(grad_out.data().data() + n * cout * p.cols(), cout, p.cols());
    std::vector<T> col(p.rows() * p.cols());
    if (grad_kernel) {
      im2col(input.data().data() + n * p.channels * p.ih * p.iw, p, col.data());
      kernel_parts[n] = Tensor<T>(kernel.shape());
      MatMap<T>(kernel_parts[n].data().data(), cout, p.rows()).noalias() =
          gy * ConstMatMap<T>(col.data(), p.rows(), p.cols()).transpose();
    }
    if (grad_input) {
      MatMap<T>(col.data(), p.rows(), p.cols()).noalias() = w.transpose() * gy;
      col2im(col.data(), p, grad_input->data().data() + n * p.channels * p.ih * p.iw);
    }
  });
  if (grad_kernel) {
    *grad_kernel = Tensor<T>(kernel.shape());
    sum_in_order(kernel_parts, *grad_kernel);
  }
  if (grad_bias) {
    *grad_bias = Tensor<T>(Shape{cout});
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t c = 0; c < cout; ++c) {
        const T* row = grad_out.data().data() + (n * cout + c) * p.cols();
        T acc{0};
        for (std::size_t i = 0; i < p.cols(); ++i) acc += row[i];
        (*grad_bias)[c] += acc;
      }
    }
  }
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                           ConvGeometry g) {
  check_kernel(input.shape(), kernel.shape(), bias.shape(), 0, 1, "conv_transpose2d");
  const Patches p = transpose_patches(input.shape(), kernel.shape(), g);
  const std::size_t batch = input.dim(0), cin = kernel.dim(0), cout = kernel.dim(1);
  Tensor<T> out(Shape{batch, cout, p.ih, p.iw});
  const ConstMatMap<T> w(kernel.data().data(), cin, p.rows());
  parallel_for(batch, [&](std::size_t n) {
    std::vector<T> col(p.rows() * p.cols());
    const ConstMatMap<T> x(input.data().data() + n * cin * p.cols(), cin, p.cols());
    MatMap<T>(col.data(), p.rows(), p.cols()).noalias() = w.transpose() * x;
    T* y = out.data().data() + n * cout * p.ih * p.iw;
    col2im(col.data(), p, y);
    for (std::size_t c = 0; c < cout; ++c) {
      for (std::size_t i = 0; i < p.ih * p.iw; ++i) y[c * p.ih * p.iw + i] += bias[c];
    }
  });
  return out;
}

template <typename T>
void conv_transpose2d_backward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& grad_out,
                               ConvGeometry g, Tensor<T>* grad_input, Tensor<T>* grad_kernel,
                               Tensor<T>* grad_bias) {
  const Patches p = transpose_patches(input.shape(), kernel.shape(), g);
  const std::size_t batch = input.dim(0), cin = kernel.dim(0), cout = kernel.dim(1);
  require_same_shape(grad_out.shape(), Shape{batch, cout, p.ih, p.iw}, "conv_transpose2d_backward");
  const ConstMatMap<T> w(kernel.data().data(), cin, p.rows());
  if (grad_input) *grad_input = Tensor<T>(input.shape());
  std::vector<Tensor<T>> kernel_parts(grad_kernel ? batch : 0);
  parallel_for(batch, [&](std::size_t n) {
    std::vector<T> col(p.rows() * p.cols());
    im2col(grad_out.data().data() + n * cout * p.ih * p.iw, p, col.data());
    const ConstMatMap<T> gcol(col.data(), p.rows(), p.cols());
    if (grad_input) {
      MatMap<T>(grad_input->data().data() + n * cin * p.cols(), cin, p.cols()).noalias() = w * gcol;
    }
    if (grad_kernel) {
      kernel_parts[n] = Tensor<T>(kernel.shape());
      const ConstMatMap<T> x(input.data().data() + n * cin * p.cols(), cin, p.cols());
      MatMap<T>(kernel_parts[n].data().data(), cin, p.rows()).noalias() = x * gcol.transpose();
    }
  });
  if (grad_kernel) {
    *grad_kernel = Tensor<T>(kernel.shape());
    sum_in_order(kernel_parts, *grad_kernel);
  }
  if (grad_bias) {
    *grad_bias = Tensor<T>(Shape{cout});
    const std::size_t plane = p.ih * p.iw;
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t c = 0; c < cout; ++c) {
        const T* row = grad_out.data().data() + (n * cout + c) * plane;
        T acc{0};
        for (std::size_t i = 0; i < plane; ++i) acc += row[i];
        (*grad_bias)[c] += acc;
      }
    }
  }
}

#define SPD_INSTANTIATE_CONV(T)                                                                         \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, ConvGeometry);       \
  template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                      ConvGeometry);                                                    \
  template void conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, ConvGeometry,     \
                                Tensor<T>*, Tensor<T>*, Tensor<T>*);                                    \
  template void conv_transpose2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                          ConvGeometry, Tensor<T>*, Tensor<T>*, Tensor<T>*);

SPD_INSTANTIATE_CONV(float)
SPD_INSTANTIATE_CONV(double)

#undef SPD_INSTANTIATE_CONV

}  // namespace spd
