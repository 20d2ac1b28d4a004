#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "asldn/error.hpp"
#include "asldn/image_ops.hpp"
#include "asldn/tensor_io.hpp"

namespace asldn {

// Reported in place of +inf when test and truth agree exactly.
inline constexpr double kPsnrCap = 99.0;

// 10 log10(range^2 / MSE), with MSE taken over `mask` when given.
inline double psnr(const Image& test, const Image& truth, double data_range,
                   const Image* mask = nullptr) {
  require_same_shape(test, truth, "psnr");
  require(data_range > 0, ErrorCode::InvalidArgument, "psnr data_range must be > 0");
  if (mask) require_same_shape(test, *mask, "psnr mask");
  double sq = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (mask && !in_mask(*mask, i)) continue;
    const double d = test[i] - truth[i];
    sq += d * d;
    ++n;
  }
  require(n > 0, ErrorCode::InvalidArgument, "psnr over an empty mask");
  const double mse = sq / static_cast<double>(n);
  if (mse == 0) return kPsnrCap;
  return 10.0 * std::log10(data_range * data_range / mse);
}

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

// Mean SSIM over local 11x11 Gaussian (sigma 1.5) windows with
// C1 = (0.01 L)^2, C2 = (0.03 L)^2. Window centers are restricted to positions
// where the whole window fits; with `region` set, only centers inside that box
// are averaged.
inline double ssim(const Image& test, const Image& truth, double data_range,
                   const std::optional<BoundingBox>& region = std::nullopt) {
  require_same_shape(test, truth, "ssim");
  require_image(test, "ssim input");
  require(data_range > 0, ErrorCode::InvalidArgument, "ssim data_range must be > 0");
  const std::size_t H = test.dim(0), W = test.dim(1);
  require(H >= kSsimWindow && W >= kSsimWindow, ErrorCode::InvalidArgument,
          "ssim needs images of at least 11x11");

  std::vector<double> w(kSsimWindow * kSsimWindow);
  {
    const double half = (kSsimWindow - 1) / 2.0;
    double total = 0;
    for (std::size_t i = 0; i < kSsimWindow; ++i)
      for (std::size_t j = 0; j < kSsimWindow; ++j) {
        const double dy = static_cast<double>(i) - half, dx = static_cast<double>(j) - half;
        w[i * kSsimWindow + j] = std::exp(-(dy * dy + dx * dx) / (2 * kSsimSigma * kSsimSigma));
        total += w[i * kSsimWindow + j];
      }
    for (auto& v : w) v /= total;
  }
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  const std::size_t half = kSsimWindow / 2;

  double acc = 0;
  std::size_t count = 0;
  for (std::size_t cy = half; cy + half < H; ++cy)
    for (std::size_t cx = half; cx + half < W; ++cx) {
      if (region && !region->contains(cy, cx)) continue;
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t i = 0; i < kSsimWindow; ++i)
        for (std::size_t j = 0; j < kSsimWindow; ++j) {
          const double wt = w[i * kSsimWindow + j];
          const std::size_t p = (cy - half + i) * W + (cx - half + j);
          const double a = test[p], b = truth[p];
          ma += wt * a;
          mb += wt * b;
          saa += wt * (a * a);
          sbb += wt * (b * b);
          sab += wt * (a * b);
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      const double num = (2 * (ma * mb) + c1) * (2 * cov + c2);
      const double den = ((ma * ma) + (mb * mb) + c1) * (va + vb + c2);
      acc += num / den;
      ++count;
    }
  require(count > 0, ErrorCode::InvalidArgument, "ssim region holds no full window");
  return acc / static_cast<double>(count);
}

struct MaskedStats {
  double mean = 0;
  double std = 0;  // population
  std::size_t count = 0;
};

inline MaskedStats masked_stats(const Image& img, const Image& mask) {
  require_same_shape(img, mask, "masked_stats");
  MaskedStats s;
  double sum = 0;
  for (std::size_t i = 0; i < img.size(); ++i)
    if (in_mask(mask, i)) {
      sum += img[i];
      ++s.count;
    }
  require(s.count > 0, ErrorCode::InvalidArgument, "empty mask");
  s.mean = sum / static_cast<double>(s.count);
  double sq = 0;
  for (std::size_t i = 0; i < img.size(); ++i)
    if (in_mask(mask, i)) sq += (img[i] - s.mean) * (img[i] - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(s.count));
  return s;
}

// mean(img[GM]) / std(img[WM ROI]); +inf when the WM ROI is flat.
inline double roi_snr(const Image& img, const Image& gm_roi, const Image& wm_roi) {
  const auto gm = masked_stats(img, gm_roi);
  const auto wm = masked_stats(img, wm_roi);
  require(wm.count >= 2, ErrorCode::InvalidArgument, "WM ROI needs at least 2 pixels");
  if (wm.std == 0) return std::numeric_limits<double>::infinity();
  return gm.mean / wm.std;
}

inline double gmwm_contrast(const Image& img, const Image& gm_mask, const Image& wm_mask) {
  const auto gm = masked_stats(img, gm_mask);
  const auto wm = masked_stats(img, wm_mask);
  require(wm.mean != 0, ErrorCode::NumericalFailure, "WM mean is zero");
  return gm.mean / wm.mean;
}

// Evaluation region: GM or WM, dilated by 2 px.
inline Image evaluation_mask(const Image& gm_mask, const Image& wm_mask) {
  return dilate(mask_union(gm_mask, wm_mask), 2);
}

// WM mask eroded by 1 px; falls back to the full mask when erosion leaves < 2 px.
inline Image wm_roi(const Image& wm_mask) {
  auto roi = erode(wm_mask, 1);
  return mask_count(roi) >= 2 ? roi : wm_mask;
}

inline constexpr double kCorrelationThreshold = 0.3;

// Per-pixel Pearson r across subjects between outputs and references. Values
// at or below `threshold`, and pixels where either series is constant, map to 0.
inline Image correlation_map(std::span<const Image> outputs, std::span<const Image> references,
                             double threshold = kCorrelationThreshold) {
  require(outputs.size() == references.size(), ErrorCode::ShapeMismatch,
          "correlation_map: output/reference count mismatch");
  require(outputs.size() >= 3, ErrorCode::InvalidArgument, "correlation_map needs >= 3 subjects");
  const auto& shape = outputs.front().shape();
  for (std::size_t s = 0; s < outputs.size(); ++s)
    require(outputs[s].shape() == shape && references[s].shape() == shape, ErrorCode::ShapeMismatch,
            "correlation_map: subject images differ in shape");
  const auto n = static_cast<double>(outputs.size());
  Image r(shape);
  for (std::size_t i = 0; i < r.size(); ++i) {
    double ma = 0, mb = 0;
    for (std::size_t s = 0; s < outputs.size(); ++s) {
      ma += outputs[s][i];
      mb += references[s][i];
    }
    ma /= n;
    mb /= n;
    double saa = 0, sbb = 0, sab = 0;
    for (std::size_t s = 0; s < outputs.size(); ++s) {
      const double a = outputs[s][i] - ma, b = references[s][i] - mb;
      saa += a * a;
      sbb += b * b;
      sab += a * b;
    }
    if (saa <= 0 || sbb <= 0) continue;
    const double v = sab / std::sqrt(saa * sbb);
    r[i] = v > threshold ? v : 0.0;
  }
  return r;
}

// 8-bit binary PGM ("P5").
inline void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
                      std::span<const std::uint8_t> pixels) {
  require(pixels.size() == height * width, ErrorCode::ShapeMismatch, "pgm pixel count");
  write_file_atomic(path, [&](std::ostream& os) {
    os << "P5\n" << width << ' ' << height << "\n255\n";
    os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  });
}

// Linear window [lo, hi] -> 0..255, clamped.
inline std::vector<std::uint8_t> window_to_gray(const Image& img, double lo, double hi) {
  require(hi > lo, ErrorCode::InvalidArgument, "display window must have hi > lo");
  std::vector<std::uint8_t> px(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double t = std::clamp((img[i] - lo) / (hi - lo), 0.0, 1.0);
    px[i] = static_cast<std::uint8_t>(std::lround(255.0 * t));
  }
  return px;
}

// r in [threshold, 1] -> gray 1..255; suppressed pixels (0) stay black.
inline std::vector<std::uint8_t> correlation_to_gray(const Image& r,
                                                     double threshold = kCorrelationThreshold) {
  std::vector<std::uint8_t> px(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r[i] <= threshold) continue;
    const double t = std::clamp((r[i] - threshold) / (1.0 - threshold), 0.0, 1.0);
    px[i] = static_cast<std::uint8_t>(1 + std::lround(254.0 * t));
  }
  return px;
}

struct MetricsRow {
  std::string subject_id;
  std::string method;
  double psnr_db = 0;
  double ssim = 0;
  double snr = 0;
  double gmwm_contrast = 0;
};

inline constexpr const char* kReportHeader = "subject_id,method,psnr_db,ssim,snr,gmwm_contrast";

inline std::string format_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

inline void write_report(std::ostream& os, std::span<const MetricsRow> rows) {
  os << kReportHeader << '\n';
  for (const auto& r : rows)
    os << r.subject_id << ',' << r.method << ',' << format_metric(r.psnr_db) << ','
       << format_metric(r.ssim) << ',' << format_metric(r.snr) << ','
       << format_metric(r.gmwm_contrast) << '\n';
}

inline double parse_metric(const std::string& field, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used == field.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::CorruptFile, "line " + std::to_string(line) + ": bad number '" + field + "'");
}

inline std::vector<MetricsRow> read_report(std::istream& is) {
  std::string line;
  require(static_cast<bool>(std::getline(is, line)) && line == kReportHeader,
          ErrorCode::CorruptFile, "report CSV must start with '" + std::string(kReportHeader) + "'");
  std::vector<MetricsRow> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    require(f.size() == 6, ErrorCode::CorruptFile,
            "line " + std::to_string(lineno) + ": expected 6 fields, got " + std::to_string(f.size()));
    rows.push_back({f[0], f[1], parse_metric(f[2], lineno), parse_metric(f[3], lineno),
                    parse_metric(f[4], lineno), parse_metric(f[5], lineno)});
  }
  return rows;
}

struct MeanStd {
  double mean = 0;
  double std = 0;  // sample std (n - 1); 0 for a single value
};

inline MeanStd mean_std(std::span<const double> v) {
  require(!v.empty(), ErrorCode::InvalidArgument, "mean_std of nothing");
  MeanStd m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double sq = 0;
    for (double x : v) sq += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(sq / static_cast<double>(v.size() - 1));
  }
  return m;
}

struct MethodAggregate {
  std::string method;
  std::size_t count = 0;
  MeanStd psnr_db, ssim, snr, gmwm_contrast;
};

// Per-method mean and std, methods in order of first appearance.
inline std::vector<MethodAggregate> aggregate(std::span<const MetricsRow> rows) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const MetricsRow*>> groups;
  for (const auto& r : rows) {
    if (!groups.count(r.method)) order.push_back(r.method);
    groups[r.method].push_back(&r);
  }
  std::vector<MethodAggregate> out;
  for (const auto& m : order) {
    const auto& g = groups[m];
    std::vector<double> p, s, n, c;
    for (const auto* r : g) {
      p.push_back(r->psnr_db);
      s.push_back(r->ssim);
      n.push_back(r->snr);
      c.push_back(r->gmwm_contrast);
    }
    out.push_back({m, g.size(), mean_std(p), mean_std(s), mean_std(n), mean_std(c)});
  }
  return out;
}

inline void write_aggregate(std::ostream& os, std::span<const MethodAggregate> agg) {
  os << "method,n,psnr_mean,psnr_std,ssim_mean,ssim_std,snr_mean,snr_std,contrast_mean,contrast_std\n";
  for (const auto& a : agg)
    os << a.method << ',' << a.count << ',' << format_metric(a.psnr_db.mean) << ','
       << format_metric(a.psnr_db.std) << ',' << format_metric(a.ssim.mean) << ','
       << format_metric(a.ssim.std) << ',' << format_metric(a.snr.mean) << ','
       << format_metric(a.snr.std) << ',' << format_metric(a.gmwm_contrast.mean) << ','
       << format_metric(a.gmwm_contrast.std) << '\n';
}

}  // namespace asldn
