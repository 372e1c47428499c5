#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "lumafuse/image.hpp"
#include "lumafuse/random.hpp"

namespace lumafuse::synthetic {

// Independent uniform samples in [lo, hi].
inline Image uniform_noise(std::size_t h, std::size_t w, std::uint64_t seed, double lo = 0.0,
                           double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> data(h * w * 3);
  for (double& v : data) v = rng.uniform(lo, hi);
  return Image(h, w, std::move(data));
}

// Piecewise-smooth scene: a tilted illumination gradient, a handful of
// coloured discs, and mild per-pixel texture. Values stay inside [0.02, 0.98].
inline Image scene(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  struct Disc {
    double cy, cx, radius, r, g, b;
  };
  std::vector<Disc> discs(6);
  for (auto& d : discs) {
    d.cy = rng.uniform(0.0, static_cast<double>(h));
    d.cx = rng.uniform(0.0, static_cast<double>(w));
    d.radius = rng.uniform(0.1, 0.35) * static_cast<double>(std::min(h, w));
    d.r = rng.uniform(0.1, 0.9);
    d.g = rng.uniform(0.1, 0.9);
    d.b = rng.uniform(0.1, 0.9);
  }
  const double gy = rng.uniform(-0.3, 0.3), gx = rng.uniform(-0.3, 0.3);
  std::vector<double> data(h * w * 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double fy = static_cast<double>(y) / static_cast<double>(h);
      const double fx = static_cast<double>(x) / static_cast<double>(w);
      double rgb[3] = {0.45 + gy * fy + gx * fx, 0.42 + gy * fy + gx * fx, 0.40 + gy * fy + gx * fx};
      for (const auto& d : discs) {
        const double dy = static_cast<double>(y) - d.cy, dx = static_cast<double>(x) - d.cx;
        const double dist = std::sqrt(dy * dy + dx * dx);
        // Soft edge two pixels wide.
        const double m = std::clamp((d.radius - dist) / 2.0 + 0.5, 0.0, 1.0);
        rgb[0] = (1 - m) * rgb[0] + m * d.r;
        rgb[1] = (1 - m) * rgb[1] + m * d.g;
        rgb[2] = (1 - m) * rgb[2] + m * d.b;
      }
      for (int c = 0; c < 3; ++c) {
        const double v = rgb[c] + 0.03 * (rng.uniform() - 0.5);
        data[(y * w + x) * 3 + c] = std::clamp(v, 0.02, 0.98);
      }
    }
  }
  return Image(h, w, std::move(data));
}

// Multiplies every sample by `exposure` (< 1 darkens).
inline Image scaled(const Image& img, double exposure) {
  std::vector<double> data(img.data().begin(), img.data().end());
  for (double& v : data) v = std::clamp(v * exposure, 0.0, 1.0);
  return Image(img.height(), img.width(), std::move(data));
}

// Additive Gaussian noise of standard deviation `sigma`, clamped to [0,1].
inline Image with_noise(const Image& img, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> data(img.data().begin(), img.data().end());
  for (double& v : data) v = std::clamp(v + sigma * rng.normal(), 0.0, 1.0);
  return Image(img.height(), img.width(), std::move(data));
}

}  // namespace lumafuse::synthetic
