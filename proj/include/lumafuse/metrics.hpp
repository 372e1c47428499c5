#pragma once
// Full-reference quality metrics. SSIM and VIF run on the luminance plane.

#include <cmath>
#include <cstdio>
#include <string>

#include "lumafuse/errors.hpp"
#include "lumafuse/image.hpp"
#include "lumafuse/isp.hpp"

namespace lumafuse {

inline constexpr double kPsnrCap = 100.0;

namespace detail {

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": size mismatch " + std::to_string(a.height()) + "x" +
                     std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                     std::to_string(b.width()));
  }
}

inline void require_min_side(const Image& a, std::size_t side, const char* what) {
  if (a.height() < side || a.width() < side) {
    throw ShapeError(std::string(what) + " needs at least " + std::to_string(side) + "x" + std::to_string(side) +
                     " input");
  }
}

// Correlation with no padding; output shrinks by 2*radius per axis.
inline Raster filter_valid(const Raster& in, const Kernel2d& k) {
  const std::size_t side = static_cast<std::size_t>(k.side());
  const std::size_t oh = in.height - side + 1, ow = in.width - side + 1;
  Raster out(oh, ow, 1);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double sum = 0.0;
      for (std::size_t ky = 0; ky < side; ++ky) {
        const double* row = &in.values[(y + ky) * in.width + x];
        const double* kw = &k.weights[ky * side];
        for (std::size_t kx = 0; kx < side; ++kx) sum += kw[kx] * row[kx];
      }
      out.values[y * ow + x] = sum;
    }
  }
  return out;
}

inline Raster product(const Raster& a, const Raster& b) {
  Raster out(a.height, a.width, a.channels);
  for (std::size_t i = 0; i < a.values.size(); ++i) out.values[i] = a.values[i] * b.values[i];
  return out;
}

inline Raster decimate2(const Raster& in) {
  const std::size_t h = (in.height + 1) / 2, w = (in.width + 1) / 2;
  Raster out(h, w, 1);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) out.values[y * w + x] = in.values[2 * y * in.width + 2 * x];
  }
  return out;
}

}  // namespace detail

// 10 log10(1 / MSE) over all channels, peak 1.
inline double psnr(const Image& x, const Image& y) {
  detail::require_same_shape(x, y, "psnr");
  const auto a = x.data(), b = y.data();
  double sse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sse += d * d;
  }
  const double mse = sse / static_cast<double>(a.size());
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

inline double ssim(const Image& x, const Image& y) {
  detail::require_same_shape(x, y, "ssim");
  detail::require_min_side(x, kSsimWindow, "ssim");
  static const Kernel2d k = Kernel2d::gaussian(kSsimWindow / 2, kSsimSigma);
  const Raster a = luminance(x), b = luminance(y);
  const Raster mu_a = detail::filter_valid(a, k), mu_b = detail::filter_valid(b, k);
  const Raster aa = detail::filter_valid(detail::product(a, a), k);
  const Raster bb = detail::filter_valid(detail::product(b, b), k);
  const Raster ab = detail::filter_valid(detail::product(a, b), k);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.values.size(); ++i) {
    const double ma = mu_a.values[i], mb = mu_b.values[i];
    const double va = aa.values[i] - ma * ma, vb = bb.values[i] - mb * mb;
    const double cov = ab.values[i] - ma * mb;
    total += ((2 * ma * mb + kSsimC1) * (2 * cov + kSsimC2)) / ((ma * ma + mb * mb + kSsimC1) * (va + vb + kSsimC2));
  }
  return total / static_cast<double>(mu_a.values.size());
}

inline constexpr std::size_t kVifScales = 4;
inline constexpr std::size_t kVifWindow = 9;
inline constexpr double kVifSigma = 1.8;
inline constexpr double kVifNoiseVar = 2.0 / (255.0 * 255.0);
// The usual 1e-10 variance floor, stated on the 0..255 scale.
inline constexpr double kVifEps = 1e-10 / (255.0 * 255.0);
inline constexpr std::size_t kVifMinSide = 32;
inline constexpr const char* kVifVariant = "pixel-multiscale";

// Pixel-domain VIF. Each scale after the first blurs then keeps every other
// sample; local statistics use reflect padding so small scales keep all pixels.
inline double vif(const Image& ref, const Image& dist) {
  detail::require_same_shape(ref, dist, "vif");
  detail::require_min_side(ref, kVifMinSide, "vif");
  static const Kernel2d k = Kernel2d::gaussian(kVifWindow / 2, kVifSigma);
  Raster a = luminance(ref), b = luminance(dist);
  double num = 0.0, den = 0.0;
  for (std::size_t s = 0; s < kVifScales; ++s) {
    if (s > 0) {
      a = detail::decimate2(gaussian_blur(a, k));
      b = detail::decimate2(gaussian_blur(b, k));
    }
    const Raster mu_a = gaussian_blur(a, k), mu_b = gaussian_blur(b, k);
    const Raster aa = gaussian_blur(detail::product(a, a), k);
    const Raster bb = gaussian_blur(detail::product(b, b), k);
    const Raster ab = gaussian_blur(detail::product(a, b), k);
    for (std::size_t i = 0; i < a.values.size(); ++i) {
      const double ma = mu_a.values[i], mb = mu_b.values[i];
      double sx = std::max(0.0, aa.values[i] - ma * ma);
      const double sy = std::max(0.0, bb.values[i] - mb * mb);
      const double sxy = ab.values[i] - ma * mb;
      double g = sxy / (sx + kVifEps);
      double sv = sy - g * sxy;
      if (sx < kVifEps) {
        g = 0.0;
        sv = sy;
        sx = 0.0;
      }
      if (sy < kVifEps) {
        g = 0.0;
        sv = 0.0;
      }
      if (g < 0.0) {
        sv = sy;
        g = 0.0;
      }
      sv = std::max(sv, kVifEps);
      num += std::log2(1.0 + g * g * sx / (sv + kVifNoiseVar));
      den += std::log2(1.0 + sx / kVifNoiseVar);
    }
  }
  // Two flat images carry no information either way.
  if (den <= 0.0) return num <= 0.0 ? 1.0 : 0.0;
  return num / den;
}

struct IqaReport {
  double psnr = 0.0;
  double ssim = 0.0;
  double vif = 0.0;

  std::string key_values() const {
    char buf[160];
    std::snprintf(buf, sizeof buf, "psnr=%.6f ssim=%.6f vif=%.6f vif_variant=%s", psnr, ssim, vif, kVifVariant);
    return buf;
  }

  static std::string csv_header() { return "name,psnr,ssim,vif"; }

  std::string csv_row(const std::string& name) const {
    char buf[96];
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f", psnr, ssim, vif);
    return csv_field(name) + buf;
  }

  // Quotes a field holding a comma, quote or line break.
  static std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
      if (c == '"') out += '"';
      out += c;
    }
    return out + "\"";
  }
};

inline IqaReport assess(const Image& ref, const Image& dist) {
  return {psnr(ref, dist), ssim(ref, dist), vif(ref, dist)};
}

}  // namespace lumafuse
