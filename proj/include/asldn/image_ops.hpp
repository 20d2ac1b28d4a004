#pragma once

// 2-D image helpers on [H,W] double tensors.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "asldn/error.hpp"
#include "asldn/tensor.hpp"

namespace asldn {

using Image = Tensor<double>;

inline constexpr double kFwhmToSigma = 2.3548200450309493;  // 2 sqrt(2 ln 2)

inline void require_image(const Image& img, const char* what) {
  require(img.rank() == 2, ErrorCode::ShapeMismatch,
          std::string(what) + " must be [H,W], got " + shape_string(img.shape()));
}

// Normalized Gaussian taps on [-ceil(3 sigma), ceil(3 sigma)].
inline std::vector<double> gaussian_kernel_1d(double sigma) {
  require(sigma > 0, ErrorCode::InvalidArgument, "gaussian sigma must be > 0");
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (auto& v : k) v /= total;
  return k;
}

// Separable Gaussian blur, truncated at 3 sigma, zero outside the image.
inline Image gaussian_blur(const Image& img, double sigma) {
  require_image(img, "gaussian_blur input");
  const auto k = gaussian_kernel_1d(sigma);
  const auto r = static_cast<std::ptrdiff_t>(k.size() / 2);
  const auto H = static_cast<std::ptrdiff_t>(img.dim(0));
  const auto W = static_cast<std::ptrdiff_t>(img.dim(1));
  Image tmp(img.shape()), out(img.shape());
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      double acc = 0;
      for (std::ptrdiff_t t = -r; t <= r; ++t) {
        const auto xx = x + t;
        if (xx >= 0 && xx < W) acc += k[static_cast<std::size_t>(t + r)] * img[static_cast<std::size_t>(y * W + xx)];
      }
      tmp[static_cast<std::size_t>(y * W + x)] = acc;
    }
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      double acc = 0;
      for (std::ptrdiff_t t = -r; t <= r; ++t) {
        const auto yy = y + t;
        if (yy >= 0 && yy < H) acc += k[static_cast<std::size_t>(t + r)] * tmp[static_cast<std::size_t>(yy * W + x)];
      }
      out[static_cast<std::size_t>(y * W + x)] = acc;
    }
  return out;
}

inline Image gaussian_blur_fwhm(const Image& img, double fwhm_px) {
  require(fwhm_px > 0, ErrorCode::InvalidArgument, "fwhm must be > 0");
  return gaussian_blur(img, fwhm_px / kFwhmToSigma);
}

// Binary masks are images holding 0 or 1.
inline bool in_mask(const Image& mask, std::size_t i) { return mask[i] > 0.5; }

inline std::size_t mask_count(const Image& mask) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) n += in_mask(mask, i);
  return n;
}

inline Image mask_union(const Image& a, const Image& b) {
  require_same_shape(a, b, "mask_union");
  Image out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (in_mask(a, i) || in_mask(b, i)) ? 1.0 : 0.0;
  return out;
}

// Morphology with a (2 radius + 1)^2 square element; pixels beyond the border
// count as background.
inline Image morph(const Image& mask, std::size_t radius, bool dilate) {
  require_image(mask, "mask");
  const auto H = static_cast<std::ptrdiff_t>(mask.dim(0));
  const auto W = static_cast<std::ptrdiff_t>(mask.dim(1));
  const auto r = static_cast<std::ptrdiff_t>(radius);
  Image out(mask.shape());
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      bool any = false, all = true;
      for (std::ptrdiff_t dy = -r; dy <= r; ++dy)
        for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
          const auto yy = y + dy, xx = x + dx;
          const bool v = yy >= 0 && yy < H && xx >= 0 && xx < W &&
                         in_mask(mask, static_cast<std::size_t>(yy * W + xx));
          any |= v;
          all &= v;
        }
      out[static_cast<std::size_t>(y * W + x)] = (dilate ? any : all) ? 1.0 : 0.0;
    }
  return out;
}

inline Image dilate(const Image& mask, std::size_t radius) { return morph(mask, radius, true); }
inline Image erode(const Image& mask, std::size_t radius) { return morph(mask, radius, false); }

struct BoundingBox {
  std::size_t y0 = 0, y1 = 0, x0 = 0, x1 = 0;  // inclusive
  bool contains(std::size_t y, std::size_t x) const { return y >= y0 && y <= y1 && x >= x0 && x <= x1; }
};

inline BoundingBox bounding_box(const Image& mask) {
  require_image(mask, "mask");
  const std::size_t H = mask.dim(0), W = mask.dim(1);
  BoundingBox b{H, 0, W, 0};
  bool any = false;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      if (in_mask(mask, y * W + x)) {
        any = true;
        b.y0 = std::min(b.y0, y);
        b.y1 = std::max(b.y1, y);
        b.x0 = std::min(b.x0, x);
        b.x1 = std::max(b.x1, x);
      }
  require(any, ErrorCode::InvalidArgument, "bounding box of an empty mask");
  return b;
}

}  // namespace asldn
