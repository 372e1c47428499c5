#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lumafuse/errors.hpp"
#include "lumafuse/image.hpp"

namespace lumafuse {

// ---------------------------------------------------------------------------
// Hyperparameters
// ---------------------------------------------------------------------------

inline constexpr std::size_t kIspParamCount = 6;

struct ParamRange {
  double lo;
  double hi;
  constexpr double clamp(double v) const { return v < lo ? lo : (v > hi ? hi : v); }
  constexpr bool contains(double v) const { return v >= lo && v <= hi; }
};

// Order matches IspParams::operator[] and the on-disk key order.
inline constexpr std::array<std::string_view, kIspParamCount> kIspParamNames = {
    "w_r", "w_g", "w_b", "gamma", "alpha", "lambda"};

inline constexpr std::array<ParamRange, kIspParamCount> kIspParamRanges = {{
    {0.5, 2.0},  // w_r
    {0.5, 2.0},  // w_g
    {0.5, 2.0},  // w_b
    {0.3, 3.0},  // gamma
    {0.0, 1.0},  // alpha
    {0.0, 5.0},  // lambda
}};

enum class IspParam : std::size_t { WhiteR = 0, WhiteG, WhiteB, Gamma, Alpha, Lambda };

struct IspParams {
  double w_r = 1.0;
  double w_g = 1.0;
  double w_b = 1.0;
  double gamma = 1.0;
  double alpha = 0.0;
  double lambda = 0.0;

  static constexpr IspParams identity() { return {}; }

  double& operator[](std::size_t i) {
    switch (i) {
      case 0: return w_r;
      case 1: return w_g;
      case 2: return w_b;
      case 3: return gamma;
      case 4: return alpha;
      default: return lambda;
    }
  }
  double operator[](std::size_t i) const { return const_cast<IspParams&>(*this)[i]; }

  std::array<double, kIspParamCount> to_array() const { return {w_r, w_g, w_b, gamma, alpha, lambda}; }

  static IspParams from_array(const std::array<double, kIspParamCount>& a) {
    return {a[0], a[1], a[2], a[3], a[4], a[5]};
  }

  // Throws ParameterError naming the first offending field.
  void validate() const {
    for (std::size_t i = 0; i < kIspParamCount; ++i) {
      check(i, (*this)[i]);
    }
  }

  // Nearest point inside the admissible box.
  IspParams projected() const {
    IspParams out = *this;
    for (std::size_t i = 0; i < kIspParamCount; ++i) out[i] = kIspParamRanges[i].clamp(out[i]);
    return out;
  }

  static void check(std::size_t index, double value) {
    const ParamRange r = kIspParamRanges[index];
    if (!std::isfinite(value) || !r.contains(value)) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s = %.17g outside [%g, %g]",
                    std::string(kIspParamNames[index]).c_str(), value, r.lo, r.hi);
      throw ParameterError(buf);
    }
  }

  bool operator==(const IspParams&) const = default;
};

// key=value text, one per line, fixed key order.
inline std::string format_params(const IspParams& p) {
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < kIspParamCount; ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", p[i]);
    out += std::string(kIspParamNames[i]) + "=" + buf + "\n";
  }
  return out;
}

inline IspParams parse_params(std::string_view text) {
  IspParams p;
  std::array<bool, kIspParamCount> seen{};
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    const std::size_t line_offset = start;
    start = end + 1;
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw FormatError("expected key=value", line_offset);
    const std::string_view key = line.substr(0, eq);
    const std::string_view val = line.substr(eq + 1);
    const auto it = std::find(kIspParamNames.begin(), kIspParamNames.end(), key);
    if (it == kIspParamNames.end()) {
      throw FormatError("unknown parameter '" + std::string(key) + "'", line_offset);
    }
    const auto idx = static_cast<std::size_t>(it - kIspParamNames.begin());
    double v = 0.0;
    const auto res = std::from_chars(val.data(), val.data() + val.size(), v);
    if (res.ec != std::errc() || res.ptr != val.data() + val.size()) {
      throw FormatError("bad number for '" + std::string(key) + "'", line_offset + eq + 1);
    }
    p[idx] = v;
    seen[idx] = true;
  }
  for (std::size_t i = 0; i < kIspParamCount; ++i) {
    if (!seen[i]) throw FormatError("missing parameter '" + std::string(kIspParamNames[i]) + "'", text.size());
  }
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Gaussian blur
// ---------------------------------------------------------------------------

// Square normalized Gaussian kernel of side 2*radius+1, row-major.
struct Kernel2d {
  int radius = 0;
  std::vector<double> weights;

  int side() const { return 2 * radius + 1; }
  double at(int dy, int dx) const { return weights[(dy + radius) * side() + (dx + radius)]; }

  static Kernel2d gaussian(int radius, double sigma) {
    Kernel2d k;
    k.radius = radius;
    const int n = k.side();
    k.weights.resize(static_cast<std::size_t>(n * n));
    double sum = 0.0;
    for (int y = -radius; y <= radius; ++y) {
      for (int x = -radius; x <= radius; ++x) {
        const double w = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
        k.weights[(y + radius) * n + (x + radius)] = w;
        sum += w;
      }
    }
    for (double& w : k.weights) w /= sum;
    return k;
  }
};

// 5x5, sigma 1.0: the sharpening filter's low-pass.
inline const Kernel2d& sharpen_kernel() {
  static const Kernel2d k = Kernel2d::gaussian(2, 1.0);
  return k;
}

// Mirror index without repeating the edge sample (…2 1 | 0 1 2 … n-1 | n-2 …),
// extended periodically so any offset is valid for any n >= 1.
inline std::size_t reflect_index(long i, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * static_cast<long>(n - 1);
  long m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<long>(n)) m = period - m;
  return static_cast<std::size_t>(m);
}

// Per-channel 2-D correlation with reflect padding. Each output sums the taps
// in row-major kernel order.
inline Raster gaussian_blur(const Raster& in, const Kernel2d& k) {
  const std::size_t h = in.height, w = in.width, ch = in.channels;
  const std::size_t r = static_cast<std::size_t>(k.radius);
  const std::size_t ph = h + 2 * r, pw = w + 2 * r;
  const int side = k.side();

  std::vector<std::size_t> row_src(ph), col_src(pw);
  for (std::size_t i = 0; i < ph; ++i) row_src[i] = reflect_index(static_cast<long>(i) - k.radius, h);
  for (std::size_t i = 0; i < pw; ++i) col_src[i] = reflect_index(static_cast<long>(i) - k.radius, w);

  Raster out(h, w, ch);
  std::vector<double> padded(ph * pw);
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t y = 0; y < ph; ++y) {
      for (std::size_t x = 0; x < pw; ++x) padded[y * pw + x] = in.at(row_src[y], col_src[x], c);
    }
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double sum = 0.0;
        const double* kw = k.weights.data();
        for (int ky = 0; ky < side; ++ky) {
          const double* row = &padded[(y + ky) * pw + x];
          for (int kx = 0; kx < side; ++kx) sum += kw[ky * side + kx] * row[kx];
        }
        out.at(y, x, c) = sum;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Filter stages with optional forward-mode tangents
// ---------------------------------------------------------------------------

// d(output)/d(theta) for each hyperparameter, same shape as the image.
struct FilterJacobian {
  std::array<Raster, kIspParamCount> d;

  const Raster& operator[](IspParam p) const { return d[static_cast<std::size_t>(p)]; }
  const Raster& operator[](std::size_t i) const { return d[i]; }
};

namespace detail {

// Pixel state of the pipeline: values plus, when tracking, one tangent raster
// per hyperparameter.
struct StageState {
  Raster v;
  std::optional<std::array<Raster, kIspParamCount>> dv;

  void clamp_pixel(std::size_t i) {
    double& x = v.values[i];
    if (x > 1.0 || x < 0.0 || std::isnan(x)) {
      x = x > 1.0 ? 1.0 : 0.0;
      if (dv) {
        for (auto& t : *dv) t.values[i] = 0.0;
      }
    }
  }
};

inline void white_balance_stage(StageState& s, double wr, double wg, double wb) {
  const std::array<double, 3> gains = {wr, wg, wb};
  const std::size_t n = s.v.height * s.v.width;
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t i = 3 * p + c;
      const double x = s.v.values[i];
      s.v.values[i] = gains[c] * x;
      if (s.dv) {
        for (auto& t : *s.dv) t.values[i] *= gains[c];
        (*s.dv)[c].values[i] += x;
      }
      s.clamp_pixel(i);
    }
  }
}

inline void gamma_stage(StageState& s, double gamma) {
  constexpr auto kGamma = static_cast<std::size_t>(IspParam::Gamma);
  for (std::size_t i = 0; i < s.v.values.size(); ++i) {
    const double x = s.v.values[i];
    if (x <= 0.0) {
      s.v.values[i] = 0.0;
      if (s.dv) {
        for (auto& t : *s.dv) t.values[i] = 0.0;
      }
      continue;
    }
    const double y = std::pow(x, gamma);
    s.v.values[i] = y;
    if (s.dv) {
      const double slope = gamma * y / x;
      for (auto& t : *s.dv) t.values[i] *= slope;
      (*s.dv)[kGamma].values[i] += y * std::log(x);
    }
    s.clamp_pixel(i);
  }
}

inline constexpr double kContrastLumaFloor = 1e-6;

inline void contrast_stage(StageState& s, double alpha) {
  constexpr auto kAlpha = static_cast<std::size_t>(IspParam::Alpha);
  const std::size_t n = s.v.height * s.v.width;
  for (std::size_t p = 0; p < n; ++p) {
    double* px = &s.v.values[3 * p];
    const double in[3] = {px[0], px[1], px[2]};
    const double lum = luma(in[0], in[1], in[2]);
    double gain = 0.0;        // EnL / Lum
    double gain_slope = 0.0;  // d(EnL / Lum) / dLum
    if (lum >= kContrastLumaFloor) {
      const double enl = 0.5 * (1.0 - std::cos(std::numbers::pi * lum));
      gain = enl / lum;
      const double enl_slope = 0.5 * std::numbers::pi * std::sin(std::numbers::pi * lum);
      gain_slope = (enl_slope * lum - enl) / (lum * lum);
    }
    double en[3];
    for (int c = 0; c < 3; ++c) {
      en[c] = in[c] * gain;
      px[c] = alpha * en[c] + (1.0 - alpha) * in[c];
    }
    if (s.dv) {
      for (std::size_t k = 0; k < kIspParamCount; ++k) {
        double* t = &(*s.dv)[k].values[3 * p];
        const double dlum = luma(t[0], t[1], t[2]);
        double dt[3];
        for (int c = 0; c < 3; ++c) {
          const double den = gain * t[c] + in[c] * gain_slope * dlum;
          dt[c] = alpha * den + (1.0 - alpha) * t[c];
        }
        for (int c = 0; c < 3; ++c) t[c] = dt[c];
      }
      for (int c = 0; c < 3; ++c) (*s.dv)[kAlpha].values[3 * p + c] += en[c] - in[c];
    }
    for (std::size_t c = 0; c < 3; ++c) s.clamp_pixel(3 * p + c);
  }
}

inline void sharpen_stage(StageState& s, double lambda) {
  constexpr auto kLambda = static_cast<std::size_t>(IspParam::Lambda);
  const Kernel2d& k = sharpen_kernel();
  const Raster blurred = gaussian_blur(s.v, k);
  if (s.dv) {
    for (auto& t : *s.dv) {
      const Raster tb = gaussian_blur(t, k);
      for (std::size_t i = 0; i < t.values.size(); ++i) {
        t.values[i] += lambda * (t.values[i] - tb.values[i]);
      }
    }
  }
  for (std::size_t i = 0; i < s.v.values.size(); ++i) {
    const double x = s.v.values[i];
    const double detail = x - blurred.values[i];
    s.v.values[i] = x + lambda * detail;
    if (s.dv) (*s.dv)[kLambda].values[i] += detail;
    s.clamp_pixel(i);
  }
}

inline StageState initial_state(const Image& img, bool track) {
  StageState s{img.to_raster(), std::nullopt};
  if (track) {
    s.dv.emplace();
    for (auto& t : *s.dv) t = Raster(img.height(), img.width(), 3);
  }
  return s;
}

inline void run_pipeline(StageState& s, const IspParams& p) {
  white_balance_stage(s, p.w_r, p.w_g, p.w_b);
  gamma_stage(s, p.gamma);
  contrast_stage(s, p.alpha);
  sharpen_stage(s, p.lambda);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Public filters
// ---------------------------------------------------------------------------

// Per-channel gain, clamped to [0,1].
inline Image white_balance(const Image& img, double w_r, double w_g, double w_b) {
  IspParams::check(0, w_r);
  IspParams::check(1, w_g);
  IspParams::check(2, w_b);
  auto s = detail::initial_state(img, false);
  detail::white_balance_stage(s, w_r, w_g, w_b);
  return Image::clamped(s.v);
}

// v^gamma per channel, with 0^gamma = 0.
inline Image gamma_correct(const Image& img, double gamma) {
  IspParams::check(3, gamma);
  auto s = detail::initial_state(img, false);
  detail::gamma_stage(s, gamma);
  return Image::clamped(s.v);
}

// Blends the image with a luminance S-curve remap: alpha*En + (1-alpha)*In,
// En = In * EnL(Lum)/Lum, EnL(L) = (1 - cos(pi L))/2. En -> 0 as Lum -> 0.
inline Image contrast(const Image& img, double alpha) {
  IspParams::check(4, alpha);
  auto s = detail::initial_state(img, false);
  detail::contrast_stage(s, alpha);
  return Image::clamped(s.v);
}

// Unsharp mask In + lambda*(In - Gauss5x5(In)), clamped.
inline Image sharpen(const Image& img, double lambda) {
  IspParams::check(5, lambda);
  auto s = detail::initial_state(img, false);
  detail::sharpen_stage(s, lambda);
  return Image::clamped(s.v);
}

// White balance, gamma, contrast, sharpen; each stage clamped to [0,1].
inline Image apply_pipeline(const Image& img, const IspParams& p) {
  p.validate();
  auto s = detail::initial_state(img, false);
  detail::run_pipeline(s, p);
  return Image::clamped(s.v);
}

struct PipelineWithJacobian {
  Image output;
  FilterJacobian jacobian;
};

// Output and analytic d(output)/d(theta) in one pass. Pixels that hit a
// clamp in any stage carry derivative 0 from that stage on.
inline PipelineWithJacobian apply_pipeline_with_jacobian(const Image& img, const IspParams& p) {
  p.validate();
  auto s = detail::initial_state(img, true);
  detail::run_pipeline(s, p);
  PipelineWithJacobian out{Image::clamped(s.v), {}};
  out.jacobian.d = std::move(*s.dv);
  return out;
}

inline FilterJacobian pipeline_jacobian(const Image& img, const IspParams& p) {
  return apply_pipeline_with_jacobian(img, p).jacobian;
}

}  // namespace lumafuse
