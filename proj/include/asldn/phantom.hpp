#pragma once

// Synthetic 2-D ASL CBF subjects: brain-like tissue geometry, a clean CBF map
// and a 40-frame noisy CBF series with optional outlier frames.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

#include "asldn/error.hpp"
#include "asldn/image_ops.hpp"
#include "asldn/seed.hpp"
#include "asldn/tensor.hpp"

namespace asldn {

inline constexpr std::size_t kSeriesFrames = 40;
inline constexpr std::size_t kSegmentFrames = 10;

struct NoiseModel {
  double sigma = 0.0;           // per-frame noise std, CBF units
  double outlier_rate = 0.0;    // fraction of frames that are outliers
  double outlier_scale = 10.0;  // noise multiplier (and spike height in sigmas) on outlier frames
  double correlation_px = 0.0;  // Gaussian smoothing of the noise field; 0 = white
  std::uint64_t seed = 0;

  void validate() const {
    require(sigma >= 0, ErrorCode::InvalidArgument, "noise sigma must be >= 0");
    require(outlier_rate >= 0 && outlier_rate < 1, ErrorCode::InvalidArgument,
            "outlier_rate must lie in [0, 1)");
    require(outlier_rate == 0 || outlier_scale > 1, ErrorCode::InvalidArgument,
            "outlier_scale must be > 1 when outliers are enabled");
    require(correlation_px >= 0, ErrorCode::InvalidArgument, "correlation length must be >= 0");
  }
};

struct TissueModel {
  double gm_cbf = 60.0;
  double wm_cbf = 25.0;
  double variation = 0.15;  // amplitude of the smooth multiplicative field
};

struct PhantomSubject {
  Image clean;    // [H,W]
  Image gm_mask;  // [H,W], 0/1
  Image wm_mask;  // [H,W], 0/1
  Tensor<double> series;  // [40,H,W]
  std::vector<bool> outlier_flags;

  Image brain_mask() const { return mask_union(gm_mask, wm_mask); }
  Image frame(std::size_t k) const { return slice_leading(series, k); }
};

struct TissueGeometry {
  Image gm_mask;
  Image wm_mask;
  double center_y = 0, center_x = 0, axis_y = 0, axis_x = 0;
};

// Elliptical brain with a folded cortical GM ribbon, four deep GM nuclei and a
// WM interior. Shape parameters are jittered per seed.
inline TissueGeometry make_geometry(std::size_t H, std::size_t W, std::uint64_t seed) {
  require(H >= 32 && W >= 32, ErrorCode::InvalidArgument, "phantom needs H, W >= 32");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_int_distribution<int> low_fold(5, 8), high_fold(9, 13);

  TissueGeometry g;
  g.center_y = (static_cast<double>(H) - 1) / 2 + 0.02 * static_cast<double>(H) * u(rng);
  g.center_x = (static_cast<double>(W) - 1) / 2 + 0.02 * static_cast<double>(W) * u(rng);
  g.axis_y = 0.44 * static_cast<double>(H) * (1 + 0.05 * u(rng));
  g.axis_x = 0.38 * static_cast<double>(W) * (1 + 0.05 * u(rng));
  const int k1 = low_fold(rng), k2 = high_fold(rng);
  const double p1 = phase(rng), p2 = phase(rng);
  const double inner = 0.76 + 0.03 * u(rng);

  struct Blob { double cy, cx, ry, rx; };
  std::vector<Blob> nuclei;
  for (double sy : {-1.0, 1.0})
    for (double sx : {-1.0, 1.0}) {
      const double jy = 0.03 * u(rng), jx = 0.03 * u(rng);
      nuclei.push_back({sy * (0.16 + jy), sx * (0.24 + jx), 0.11 * (1 + 0.1 * u(rng)),
                        0.09 * (1 + 0.1 * u(rng))});
    }

  g.gm_mask = Image(Shape{H, W});
  g.wm_mask = Image(Shape{H, W});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double ny = (static_cast<double>(y) - g.center_y) / g.axis_y;
      const double nx = (static_cast<double>(x) - g.center_x) / g.axis_x;
      const double rho = std::hypot(ny, nx);
      if (rho > 1.0) continue;
      const double phi = std::atan2(ny, nx);
      const double ribbon = inner + 0.05 * std::sin(k1 * phi + p1) + 0.03 * std::sin(k2 * phi + p2);
      bool gm = rho > ribbon;
      for (const auto& b : nuclei) {
        const double dy = (ny - b.cy) / b.ry, dx = (nx - b.cx) / b.rx;
        gm = gm || (dy * dy + dx * dx <= 1.0);
      }
      (gm ? g.gm_mask : g.wm_mask)[y * W + x] = 1.0;
    }
  require(mask_count(g.gm_mask) > 0 && mask_count(g.wm_mask) > 0, ErrorCode::InvalidArgument,
          "degenerate phantom geometry");
  return g;
}

// Smooth field in [-1, 1] built from three low-frequency plane waves.
inline Image smooth_field(std::size_t H, std::size_t W, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> freq(0.5, 1.5), angle(0.0, 2.0 * std::numbers::pi);
  Image f(Shape{H, W});
  for (int wave = 0; wave < 3; ++wave) {
    const double cycles = freq(rng), theta = angle(rng), ph = angle(rng);
    const double ky = 2 * std::numbers::pi * cycles * std::sin(theta) / static_cast<double>(H);
    const double kx = 2 * std::numbers::pi * cycles * std::cos(theta) / static_cast<double>(W);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        f[y * W + x] += std::cos(ky * static_cast<double>(y) + kx * static_cast<double>(x) + ph);
  }
  double peak = 0;
  for (double v : f.values()) peak = std::max(peak, std::abs(v));
  if (peak > 0)
    for (auto& v : f.values()) v /= peak;
  return f;
}

// Zero-mean noise field with per-pixel std `sigma`. Correlated noise is
// Gaussian-filtered white noise rescaled by the kernel's L2 norm, so the
// interior std stays at sigma.
inline Image noise_field(std::size_t H, std::size_t W, double sigma, double correlation_px,
                         std::mt19937_64& rng) {
  Image n(Shape{H, W});
  if (sigma == 0) return n;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : n.values()) v = normal(rng);
  if (correlation_px > 0) {
    n = gaussian_blur(n, correlation_px);
    const auto k = gaussian_kernel_1d(correlation_px);
    double norm2d = 0;  // ||k (x) k||_2 = ||k||_2^2
    for (double t : k) norm2d += t * t;
    for (auto& v : n.values()) v /= norm2d;
  }
  for (auto& v : n.values()) v *= sigma;
  return n;
}

inline PhantomSubject generate_subject(std::uint64_t geometry_seed, const NoiseModel& noise,
                                       std::size_t H, std::size_t W,
                                       const TissueModel& tissue = {}) {
  noise.validate();
  auto geom = make_geometry(H, W, geometry_seed);
  std::mt19937_64 tissue_rng(derive_seed(geometry_seed, "tissue"));
  const Image field = smooth_field(H, W, tissue_rng);

  PhantomSubject s;
  s.gm_mask = std::move(geom.gm_mask);
  s.wm_mask = std::move(geom.wm_mask);
  s.clean = Image(Shape{H, W});
  for (std::size_t i = 0; i < H * W; ++i) {
    const double base = in_mask(s.gm_mask, i) ? tissue.gm_cbf : (in_mask(s.wm_mask, i) ? tissue.wm_cbf : 0.0);
    s.clean[i] = base * (1.0 + tissue.variation * field[i]);
  }
  const Image brain = s.brain_mask();

  std::mt19937_64 rng(noise.seed);
  s.outlier_flags.assign(kSeriesFrames, false);
  const auto outliers = static_cast<std::size_t>(std::lround(noise.outlier_rate * kSeriesFrames));
  {
    std::vector<std::size_t> order(kSeriesFrames);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t k = 0; k < outliers; ++k) s.outlier_flags[order[k]] = true;
  }

  std::vector<std::size_t> brain_pixels;
  for (std::size_t i = 0; i < H * W; ++i)
    if (in_mask(brain, i)) brain_pixels.push_back(i);
  std::uniform_int_distribution<std::size_t> pick(0, brain_pixels.size() - 1);
  std::uniform_real_distribution<double> radius_frac(0.2, 0.35);

  s.series = Tensor<double>(Shape{kSeriesFrames, H, W});
  for (std::size_t k = 0; k < kSeriesFrames; ++k) {
    const bool outlier = s.outlier_flags[k];
    const double sd = noise.sigma * (outlier ? noise.outlier_scale : 1.0);
    const Image n = noise_field(H, W, sd, noise.correlation_px, rng);
    Image spike(Shape{H, W});
    if (outlier) {
      // Regional hyperintensity: a Gaussian bump of height outlier_scale * sigma.
      const std::size_t c = brain_pixels[pick(rng)];
      const double cy = static_cast<double>(c / W), cx = static_cast<double>(c % W);
      const double r = radius_frac(rng) * std::min(geom.axis_y, geom.axis_x);
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const double d2 = (static_cast<double>(y) - cy) * (static_cast<double>(y) - cy) +
                            (static_cast<double>(x) - cx) * (static_cast<double>(x) - cx);
          spike[y * W + x] = noise.outlier_scale * noise.sigma * std::exp(-0.5 * d2 / (r * r));
        }
    }
    double* frame = s.series.data() + k * H * W;
    for (std::size_t i = 0; i < H * W; ++i)
      frame[i] = in_mask(brain, i) ? s.clean[i] + n[i] + spike[i] : 0.0;
  }
  return s;
}

struct SegmentMeans {
  Image input1, ref1, input2, ref2;
  Image test_input;  // same as input1
};

inline Image frame_mean(const Tensor<double>& series, std::size_t first, std::size_t count) {
  const std::size_t H = series.dim(1), W = series.dim(2);
  Image out(Shape{H, W});
  for (std::size_t k = first; k < first + count; ++k)
    for (std::size_t i = 0; i < H * W; ++i) out[i] += series[k * H * W + i];
  for (auto& v : out.values()) v /= static_cast<double>(count);
  return out;
}

inline SegmentMeans segment_means(const Tensor<double>& series) {
  require(series.rank() == 3 && series.dim(0) == kSeriesFrames, ErrorCode::InvalidArgument,
          "segment_means needs a [40,H,W] series, got " + shape_string(series.shape()));
  SegmentMeans m;
  m.input1 = frame_mean(series, 0, kSegmentFrames);
  m.ref1 = frame_mean(series, 10, kSegmentFrames);
  m.input2 = frame_mean(series, 20, kSegmentFrames);
  m.ref2 = frame_mean(series, 30, kSegmentFrames);
  m.test_input = m.input1;
  return m;
}

inline SegmentMeans segment_means(const PhantomSubject& s) { return segment_means(s.series); }

struct OutlierCleaning {
  std::vector<double> scores;    // mean |frame - median image| inside the mask
  std::vector<double> robust_z;  // (score - median) / (1.4826 MAD)
  std::vector<bool> kept;
};

inline double median_of(std::vector<double> v) {
  require(!v.empty(), ErrorCode::InvalidArgument, "median of empty set");
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2), v.end());
  const double hi = v[n / 2];
  if (n % 2) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2));
  return 0.5 * (lo + hi);
}

inline constexpr double kOutlierZ = 2.5;

// Frame-level outlier detection: frames whose robust z-score of mean absolute
// deviation from the per-pixel median image exceeds `threshold` are dropped.
// This is a simplified stand-in for slice-wise adaptive cleaning.
inline OutlierCleaning clean_outlier_frames(const Tensor<double>& series, const Image& mask,
                                            double threshold = kOutlierZ) {
  require(series.rank() == 3, ErrorCode::ShapeMismatch, "series must be [T,H,W]");
  const std::size_t T = series.dim(0), P = series.dim(1) * series.dim(2);
  require(mask.size() == P, ErrorCode::ShapeMismatch, "mask does not match series frames");
  std::vector<std::size_t> pixels;
  for (std::size_t i = 0; i < P; ++i)
    if (in_mask(mask, i)) pixels.push_back(i);
  require(!pixels.empty(), ErrorCode::InvalidArgument, "empty cleaning mask");

  std::vector<double> median_image(P);
  std::vector<double> column(T);
  for (std::size_t i : pixels) {
    for (std::size_t k = 0; k < T; ++k) column[k] = series[k * P + i];
    median_image[i] = median_of(column);
  }

  OutlierCleaning c;
  c.scores.resize(T);
  for (std::size_t k = 0; k < T; ++k) {
    double acc = 0;
    for (std::size_t i : pixels) acc += std::abs(series[k * P + i] - median_image[i]);
    c.scores[k] = acc / static_cast<double>(pixels.size());
  }
  const double med = median_of(c.scores);
  std::vector<double> dev(T);
  for (std::size_t k = 0; k < T; ++k) dev[k] = std::abs(c.scores[k] - med);
  const double scale = 1.4826 * median_of(dev);
  c.robust_z.resize(T);
  c.kept.resize(T);
  for (std::size_t k = 0; k < T; ++k) {
    const double d = c.scores[k] - med;
    c.robust_z[k] = scale > 0 ? d / scale : (d > 0 ? std::numeric_limits<double>::infinity() : 0.0);
    c.kept[k] = !(c.robust_z[k] > threshold);
  }
  require(std::any_of(c.kept.begin(), c.kept.end(), [](bool b) { return b; }),
          ErrorCode::NumericalFailure, "outlier cleaning would discard every frame");
  return c;
}

struct PseudoGoldStandard {
  Image image;
  OutlierCleaning cleaning;
};

// Outlier-cleaned mean of all frames, Gaussian-smoothed with the given FWHM.
inline PseudoGoldStandard pseudo_gold_standard(const PhantomSubject& s, double fwhm_px) {
  require(fwhm_px > 0, ErrorCode::InvalidArgument, "fwhm_px must be > 0");
  PseudoGoldStandard out;
  out.cleaning = clean_outlier_frames(s.series, s.brain_mask());
  const std::size_t H = s.series.dim(1), W = s.series.dim(2);
  Image mean(Shape{H, W});
  std::size_t kept = 0;
  for (std::size_t k = 0; k < s.series.dim(0); ++k) {
    if (!out.cleaning.kept[k]) continue;
    ++kept;
    for (std::size_t i = 0; i < H * W; ++i) mean[i] += s.series[k * H * W + i];
  }
  for (auto& v : mean.values()) v /= static_cast<double>(kept);
  out.image = gaussian_blur_fwhm(mean, fwhm_px);
  return out;
}

}  // namespace asldn
