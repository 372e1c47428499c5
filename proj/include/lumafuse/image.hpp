#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lumafuse/errors.hpp"

namespace lumafuse {

using Bytes = std::vector<std::uint8_t>;

// Luma weights shared by the contrast filter and every metric.
inline constexpr double kLumaR = 0.27;
inline constexpr double kLumaG = 0.67;
inline constexpr double kLumaB = 0.06;

inline double luma(double r, double g, double b) {
  return kLumaR * r + kLumaG * g + kLumaB * b;
}

// Dense row-major H x W x C array of doubles with no range constraint.
// Used for luminance planes, derivative rasters and network residuals.
struct Raster {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> values;

  Raster() = default;
  Raster(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), values(h * w * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return values[(y * width + x) * channels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return values[(y * width + x) * channels + c];
  }

  bool operator==(const Raster&) const = default;
};

// H x W RGB image, interleaved row-major, every sample finite and in [0, 1].
class Image {
public:
  static constexpr std::size_t kChannels = 3;

  Image() = default;

  Image(std::size_t height, std::size_t width, std::vector<double> data)
      : height_(height), width_(width), data_(std::move(data)) {
    if (data_.size() != height_ * width_ * kChannels) {
      throw ShapeError("image data length " + std::to_string(data_.size()) +
                       " does not match " + std::to_string(height_) + "x" +
                       std::to_string(width_) + "x3");
    }
    for (std::size_t i = 0; i < data_.size(); ++i) {
      const double v = data_[i];
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
        throw ParameterError("image sample " + std::to_string(i) + " = " +
                             std::to_string(v) + " outside [0,1]");
      }
    }
  }

  static Image filled(std::size_t height, std::size_t width, double r, double g, double b) {
    std::vector<double> data(height * width * kChannels);
    for (std::size_t i = 0; i < height * width; ++i) {
      data[3 * i] = r;
      data[3 * i + 1] = g;
      data[3 * i + 2] = b;
    }
    return Image(height, width, std::move(data));
  }

  // Clamps every value of a raster into [0, 1]. NaN maps to 0.
  static Image clamped(const Raster& r) {
    if (r.channels != kChannels) throw ShapeError("clamped(): raster must have 3 channels");
    std::vector<double> data(r.values.size());
    std::transform(r.values.begin(), r.values.end(), data.begin(), [](double v) {
      return v > 0.0 ? std::min(v, 1.0) : 0.0;
    });
    return Image(r.height, r.width, std::move(data));
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t pixels() const noexcept { return height_ * width_; }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> data() const noexcept { return data_; }

  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return data_[(y * width_ + x) * kChannels + c];
  }

  Raster to_raster() const {
    Raster r;
    r.height = height_;
    r.width = width_;
    r.channels = kChannels;
    r.values = data_;
    return r;
  }

  bool same_shape(const Image& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  bool operator==(const Image&) const = default;

private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> data_;
};

inline Raster luminance(const Image& img) {
  Raster out(img.height(), img.width(), 1);
  const auto d = img.data();
  for (std::size_t i = 0; i < img.pixels(); ++i) {
    out.values[i] = luma(d[3 * i], d[3 * i + 1], d[3 * i + 2]);
  }
  return out;
}

inline double mean_value(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

namespace detail {

class PpmReader {
public:
  explicit PpmReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  static bool is_space(std::uint8_t c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
  }

  // Skips whitespace and '#' comments; at least one whitespace byte required.
  void skip_separator() {
    const std::size_t start = pos_;
    while (pos_ < bytes_.size()) {
      if (is_space(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
    if (pos_ == start) throw FormatError("expected whitespace in PPM header", pos_);
    if (pos_ >= bytes_.size()) throw FormatError("truncated PPM header", pos_);
  }

  std::uint64_t read_number(const char* field) {
    const std::size_t start = pos_;
    std::uint64_t value = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 0xFFFFFFFFull) throw FormatError(std::string("PPM ") + field + " too large", start);
      ++pos_;
    }
    if (pos_ == start) {
      throw FormatError(std::string("expected decimal ") + field + " in PPM header", pos_);
    }
    return value;
  }

  std::size_t pos_ = 0;
  std::span<const std::uint8_t> bytes_;
};

}  // namespace detail

// Parses a binary P6 pixmap with maxval 255.
inline Image load_ppm(std::span<const std::uint8_t> bytes) {
  detail::PpmReader rd(bytes);
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw FormatError("bad PPM magic, expected P6", 0);
  }
  rd.pos_ = 2;
  rd.skip_separator();
  const std::uint64_t width = rd.read_number("width");
  rd.skip_separator();
  const std::uint64_t height = rd.read_number("height");
  rd.skip_separator();
  const std::size_t maxval_at = rd.pos_;
  const std::uint64_t maxval = rd.read_number("maxval");
  if (maxval != 255) {
    throw FormatError("unsupported PPM maxval " + std::to_string(maxval) + ", expected 255",
                      maxval_at);
  }
  if (rd.pos_ >= bytes.size() || !detail::PpmReader::is_space(bytes[rd.pos_])) {
    throw FormatError("expected single whitespace after PPM maxval", rd.pos_);
  }
  ++rd.pos_;
  if (width == 0 || height == 0) throw FormatError("PPM has zero extent", maxval_at);
  const std::uint64_t samples = width * height * 3;
  const std::size_t remaining = bytes.size() - rd.pos_;
  if (samples > remaining) {
    throw FormatError("truncated PPM payload: need " + std::to_string(samples) + " bytes, have " +
                          std::to_string(remaining),
                      bytes.size());
  }
  std::vector<double> data(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    data[i] = static_cast<double>(bytes[rd.pos_ + i]) / 255.0;
  }
  return Image(height, width, std::move(data));
}

inline std::uint8_t quantize_sample(double v) {
  const double scaled = std::floor(v * 255.0 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

inline Bytes save_ppm(const Image& img) {
  const std::string header =
      "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  Bytes out(header.begin(), header.end());
  out.reserve(header.size() + img.data().size());
  for (double v : img.data()) out.push_back(quantize_sample(v));
  return out;
}

inline Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path);
}

inline Image read_ppm_file(const std::string& path) { return load_ppm(read_file(path)); }

inline void write_ppm_file(const std::string& path, const Image& img) {
  write_file(path, save_ppm(img));
}

}  // namespace lumafuse
