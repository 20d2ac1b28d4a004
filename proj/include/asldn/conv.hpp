#pragma once

// Dilated 2-D convolution with "same" zero padding, lowered to GEMM.
//
//   out[n,f,y,x] = bias[f] + sum_{c,i,j} in[n,c, y + d*(i - kh/2), x + d*(j - kw/2)] * w[f,c,i,j]
//
// with out-of-range input reading as zero. Each sample is processed in turn,
// so gradient accumulation over the batch has a fixed order.
//
// Two lowerings: im2col + one GEMM when out_channels >= in_channels, and one
// GEMM per kernel tap over a zero-padded copy of the input otherwise (the
// im2col buffer would be kh*kw times the input for wide-to-narrow layers).

#include <Eigen/Core>

#include <cstddef>
#include <vector>

#include "asldn/error.hpp"
#include "asldn/tensor.hpp"

namespace asldn::kernels {

struct ConvGeometry {
  std::size_t batch = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t dilation = 1;

  std::size_t pixels() const { return height * width; }
  std::size_t patch() const { return in_channels * kernel_h * kernel_w; }
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                           std::size_t dilation) {
  require(dilation >= 1, ErrorCode::InvalidArgument, "conv2d dilation must be >= 1");
  require(input.rank() == 4, ErrorCode::ShapeMismatch,
          "conv2d input must be [N,C,H,W], got " + shape_string(input.shape()));
  require(weight.rank() == 4, ErrorCode::ShapeMismatch,
          "conv2d weight must be [F,C,kh,kw], got " + shape_string(weight.shape()));
  require(weight.dim(1) == input.dim(1), ErrorCode::ShapeMismatch,
          "conv2d weight expects " + std::to_string(weight.dim(1)) + " input channels, input has " +
              std::to_string(input.dim(1)));
  require(bias.rank() == 1 && bias.dim(0) == weight.dim(0), ErrorCode::ShapeMismatch,
          "conv2d bias must be [F]");
  return {input.dim(0), input.dim(1), weight.dim(0), input.dim(2),
          input.dim(3), weight.dim(2), weight.dim(3), dilation};
}

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

inline std::ptrdiff_t tap_offset(std::size_t tap, std::size_t kernel, std::size_t dilation) {
  return static_cast<std::ptrdiff_t>(dilation) *
         (static_cast<std::ptrdiff_t>(tap) - static_cast<std::ptrdiff_t>(kernel / 2));
}

// Valid destination range [lo, hi) along one axis for a given tap offset.
inline void valid_range(std::ptrdiff_t offset, std::size_t extent, std::size_t& lo,
                        std::size_t& hi) {
  const auto n = static_cast<std::ptrdiff_t>(extent);
  const std::ptrdiff_t l = std::max<std::ptrdiff_t>(0, -offset);
  const std::ptrdiff_t h = std::min<std::ptrdiff_t>(n, n - offset);
  lo = static_cast<std::size_t>(l);
  hi = static_cast<std::size_t>(std::max(l, h));
}

template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* cols) {
  const std::size_t hw = g.pixels();
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const T* plane = image + c * hw;
    for (std::size_t i = 0; i < g.kernel_h; ++i) {
      const auto dy = tap_offset(i, g.kernel_h, g.dilation);
      std::size_t y0, y1;
      valid_range(dy, g.height, y0, y1);
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        const auto dx = tap_offset(j, g.kernel_w, g.dilation);
        std::size_t x0, x1;
        valid_range(dx, g.width, x0, x1);
        T* row = cols + ((c * g.kernel_h + i) * g.kernel_w + j) * hw;
        std::fill(row, row + hw, T{0});
        for (std::size_t y = y0; y < y1; ++y) {
          const T* src = plane + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(y) + dy) * g.width;
          T* dst = row + y * g.width;
          for (std::size_t x = x0; x < x1; ++x)
            dst[x] = src[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(x) + dx)];
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back onto the image.
template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* image) {
  const std::size_t hw = g.pixels();
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    T* plane = image + c * hw;
    for (std::size_t i = 0; i < g.kernel_h; ++i) {
      const auto dy = tap_offset(i, g.kernel_h, g.dilation);
      std::size_t y0, y1;
      valid_range(dy, g.height, y0, y1);
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        const auto dx = tap_offset(j, g.kernel_w, g.dilation);
        std::size_t x0, x1;
        valid_range(dx, g.width, x0, x1);
        const T* row = cols + ((c * g.kernel_h + i) * g.kernel_w + j) * hw;
        for (std::size_t y = y0; y < y1; ++y) {
          T* dst = plane + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(y) + dy) * g.width;
          const T* src = row + y * g.width;
          for (std::size_t x = x0; x < x1; ++x)
            dst[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(x) + dx)] += src[x];
        }
      }
    }
  }
}

// Zero-padded planes for the per-tap lowering. Row pitch is width + 2*pad_x,
// and a tap is a constant offset into the flattened plane, so every tap reads
// a strided view of the same buffer. Output is computed on the padded row
// pitch; columns past `width` are scratch and get dropped.
struct PaddedGeometry {
  std::size_t pad_y = 0, pad_x = 0, rows = 0, pitch = 0, plane = 0, span = 0;

  explicit PaddedGeometry(const ConvGeometry& g)
      : pad_y(g.dilation * (g.kernel_h / 2)),
        pad_x(g.dilation * (g.kernel_w / 2)),
        rows(g.height + 2 * pad_y),
        pitch(g.width + 2 * pad_x),
        plane(rows * pitch + 2 * pad_x),  // tail keeps the last tap's view in bounds
        span(g.height * pitch) {}

  std::size_t offset(const ConvGeometry& g, std::size_t i, std::size_t j) const {
    return i * g.dilation * pitch + j * g.dilation;
  }
};

template <typename T>
void pad_planes(const T* image, const ConvGeometry& g, const PaddedGeometry& p, T* padded) {
  std::fill(padded, padded + g.in_channels * p.plane, T{0});
  for (std::size_t c = 0; c < g.in_channels; ++c)
    for (std::size_t y = 0; y < g.height; ++y)
      std::copy_n(image + (c * g.height + y) * g.width, g.width,
                  padded + c * p.plane + (y + p.pad_y) * p.pitch + p.pad_x);
}

template <typename T>
using StridedMap = Eigen::Map<RowMatrix<T>, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMatrix<T>, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;

// w[:, :, i, j] as an F x C matrix.
template <typename T>
ConstStridedMap<T> tap_weights(const T* w, const ConvGeometry& g, std::size_t i, std::size_t j) {
  const auto taps = static_cast<Eigen::Index>(g.kernel_h * g.kernel_w);
  return ConstStridedMap<T>(w + i * g.kernel_w + j, static_cast<Eigen::Index>(g.out_channels),
                            static_cast<Eigen::Index>(g.in_channels),
                            Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(taps * static_cast<Eigen::Index>(g.in_channels), taps));
}

template <typename T>
StridedMap<T> tap_weights(T* w, const ConvGeometry& g, std::size_t i, std::size_t j) {
  const auto taps = static_cast<Eigen::Index>(g.kernel_h * g.kernel_w);
  return StridedMap<T>(w + i * g.kernel_w + j, static_cast<Eigen::Index>(g.out_channels),
                       static_cast<Eigen::Index>(g.in_channels),
                       Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(taps * static_cast<Eigen::Index>(g.in_channels), taps));
}

inline bool use_tap_lowering(const ConvGeometry& g) { return g.out_channels < g.in_channels; }

}  // namespace detail

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                         std::size_t dilation) {
  const auto g = conv_geometry(input, weight, bias, dilation);
  Tensor<T> out(Shape{g.batch, g.out_channels, g.height, g.width});
  if (detail::use_tap_lowering(g)) {
    const detail::PaddedGeometry p(g);
    const auto F = static_cast<Eigen::Index>(g.out_channels);
    const auto C = static_cast<Eigen::Index>(g.in_channels);
    const auto N = static_cast<Eigen::Index>(p.span);
    std::vector<T> padded(g.in_channels * p.plane);
    detail::RowMatrix<T> acc(F, N);
    for (std::size_t n = 0; n < g.batch; ++n) {
      detail::pad_planes(input.data() + n * g.in_channels * g.pixels(), g, p, padded.data());
      acc.setZero();
      for (std::size_t i = 0; i < g.kernel_h; ++i)
        for (std::size_t j = 0; j < g.kernel_w; ++j) {
          detail::ConstStridedMap<T> view(padded.data() + p.offset(g, i, j), C, N,
                                          Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(static_cast<Eigen::Index>(p.plane), 1));
          acc.noalias() += detail::tap_weights(weight.data(), g, i, j) * view;
        }
      for (std::size_t f = 0; f < g.out_channels; ++f)
        for (std::size_t y = 0; y < g.height; ++y) {
          const T* src = acc.data() + static_cast<std::size_t>(f) * p.span + y * p.pitch;
          T* dst = out.data() + ((n * g.out_channels + f) * g.height + y) * g.width;
          for (std::size_t x = 0; x < g.width; ++x) dst[x] = src[x] + bias[f];
        }
    }
    return out;
  }
  std::vector<T> cols(g.patch() * g.pixels());
  detail::ConstMatrixMap<T> w(weight.data(), static_cast<Eigen::Index>(g.out_channels),
                              static_cast<Eigen::Index>(g.patch()));
  detail::ConstMatrixMap<T> colm(cols.data(), static_cast<Eigen::Index>(g.patch()),
                                 static_cast<Eigen::Index>(g.pixels()));
  for (std::size_t n = 0; n < g.batch; ++n) {
    detail::im2col(input.data() + n * g.in_channels * g.pixels(), g, cols.data());
    detail::MatrixMap<T> o(out.data() + n * g.out_channels * g.pixels(),
                           static_cast<Eigen::Index>(g.out_channels),
                           static_cast<Eigen::Index>(g.pixels()));
    o.noalias() = w * colm;
    for (std::size_t f = 0; f < g.out_channels; ++f) o.row(static_cast<Eigen::Index>(f)).array() += bias[f];
  }
  return out;
}

template <typename T>
struct ConvGradients {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

// Any of the three outputs can be skipped; skipped gradients come back empty.
struct ConvGradientMask {
  bool input = true;
  bool weight = true;
  bool bias = true;
};

template <typename T>
ConvGradients<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight,
                                 const Tensor<T>& bias, std::size_t dilation,
                                 const Tensor<T>& upstream, ConvGradientMask want = {}) {
  const auto g = conv_geometry(input, weight, bias, dilation);
  require(upstream.shape() == Shape({g.batch, g.out_channels, g.height, g.width}),
          ErrorCode::ShapeMismatch,
          "conv2d upstream gradient shape " + shape_string(upstream.shape()));
  ConvGradients<T> grads;
  if (want.input && !detail::use_tap_lowering(g)) grads.input = Tensor<T>(input.shape());
  if (want.weight) grads.weight = Tensor<T>(weight.shape());
  if (want.bias) grads.bias = Tensor<T>(bias.shape());

  if (want.bias)
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t f = 0; f < g.out_channels; ++f) {
        const T* row = upstream.data() + (n * g.out_channels + f) * g.pixels();
        T acc{0};
        for (std::size_t q = 0; q < g.pixels(); ++q) acc += row[q];
        grads.bias[f] += acc;
      }

  const auto F = static_cast<Eigen::Index>(g.out_channels);
  if (detail::use_tap_lowering(g)) {
    if (want.weight) {
      const detail::PaddedGeometry p(g);
      const auto C = static_cast<Eigen::Index>(g.in_channels);
      const auto N = static_cast<Eigen::Index>(p.span);
      std::vector<T> padded(g.in_channels * p.plane);
      detail::RowMatrix<T> up(F, N);
      up.setZero();  // scratch columns stay zero
      for (std::size_t n = 0; n < g.batch; ++n) {
        for (std::size_t f = 0; f < g.out_channels; ++f)
          for (std::size_t y = 0; y < g.height; ++y)
            std::copy_n(upstream.data() + ((n * g.out_channels + f) * g.height + y) * g.width, g.width,
                        up.data() + static_cast<std::size_t>(f) * p.span + y * p.pitch);
        detail::pad_planes(input.data() + n * g.in_channels * g.pixels(), g, p, padded.data());
        for (std::size_t i = 0; i < g.kernel_h; ++i)
          for (std::size_t j = 0; j < g.kernel_w; ++j) {
            detail::ConstStridedMap<T> view(padded.data() + p.offset(g, i, j), C, N,
                                            Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(static_cast<Eigen::Index>(p.plane), 1));
            detail::tap_weights(grads.weight.data(), g, i, j).noalias() += up * view.transpose();
          }
      }
    }
    // The adjoint of a "same" convolution is the convolution of the upstream
    // gradient with the transposed, spatially flipped kernel.
    if (want.input) {
      Tensor<T> flipped(Shape{g.in_channels, g.out_channels, g.kernel_h, g.kernel_w});
      for (std::size_t f = 0; f < g.out_channels; ++f)
        for (std::size_t c = 0; c < g.in_channels; ++c)
          for (std::size_t i = 0; i < g.kernel_h; ++i)
            for (std::size_t j = 0; j < g.kernel_w; ++j)
              flipped.at({c, f, g.kernel_h - 1 - i, g.kernel_w - 1 - j}) = weight.at({f, c, i, j});
      grads.input = conv2d_forward(upstream, flipped, Tensor<T>(Shape{g.in_channels}), dilation);
    }
    return grads;
  }

  const auto K = static_cast<Eigen::Index>(g.patch());
  const auto P = static_cast<Eigen::Index>(g.pixels());
  std::vector<T> cols(g.patch() * g.pixels());
  detail::ConstMatrixMap<T> w(weight.data(), F, K);
  detail::MatrixMap<T> colm(cols.data(), K, P);

  for (std::size_t n = 0; n < g.batch; ++n) {
    detail::ConstMatrixMap<T> up(upstream.data() + n * g.out_channels * g.pixels(), F, P);
    if (want.weight) {
      detail::im2col(input.data() + n * g.in_channels * g.pixels(), g, cols.data());
      detail::MatrixMap<T> gw(grads.weight.data(), F, K);
      gw.noalias() += up * colm.transpose();
    }
    if (want.input) {
      colm.noalias() = w.transpose() * up;
      detail::col2im_add(cols.data(), g, grads.input.data() + n * g.in_channels * g.pixels());
    }
  }
  return grads;
}

}  // namespace asldn::kernels
