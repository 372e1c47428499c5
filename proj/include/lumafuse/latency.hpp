#pragma once
// Affine transmission model and pipeline benchmark.

#include <chrono>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "lumafuse/errors.hpp"
#include "lumafuse/image.hpp"
#include "lumafuse/network.hpp"
#include "lumafuse/weights.hpp"

namespace lumafuse {

struct LatencyModel {
  std::string name;
  double propagation_ms = 0.0;
  double bandwidth_bytes_per_ms = 1.0;
  double per_image_bytes = 0.0;
  double per_image_proc_ms = 0.0;

  void validate() const {
    const auto finite_nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
    if (!finite_nonneg(propagation_ms) || !finite_nonneg(per_image_bytes) || !finite_nonneg(per_image_proc_ms)) {
      throw ParameterError("latency model values must be finite and >= 0");
    }
    if (!(bandwidth_bytes_per_ms > 0.0) || !std::isfinite(bandwidth_bytes_per_ms)) {
      throw ParameterError("bandwidth_bytes_per_ms must be > 0");
    }
  }

  double per_image_ms() const { return per_image_bytes / bandwidth_bytes_per_ms + per_image_proc_ms; }
};

// propagation + n * (payload / bandwidth + processing)
inline double simulate_latency(const LatencyModel& m, std::size_t n_images) {
  m.validate();
  return m.propagation_ms + static_cast<double>(n_images) * m.per_image_ms();
}

inline LatencyModel parse_latency_model(std::string_view text) {
  LatencyModel m;
  std::map<std::string, double*, std::less<>> fields = {
      {"propagation_ms", &m.propagation_ms},
      {"bandwidth_bytes_per_ms", &m.bandwidth_bytes_per_ms},
      {"per_image_bytes", &m.per_image_bytes},
      {"per_image_proc_ms", &m.per_image_proc_ms},
  };
  std::map<std::string, bool, std::less<>> seen;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    const std::size_t offset = start;
    start = end + 1;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw FormatError("expected key=value", offset);
    const std::string_view key = line.substr(0, eq), val = line.substr(eq + 1);
    if (seen[std::string(key)]) throw FormatError("duplicate key '" + std::string(key) + "'", offset);
    seen[std::string(key)] = true;
    if (key == "name") {
      m.name = std::string(val);
      continue;
    }
    const auto it = fields.find(key);
    if (it == fields.end()) throw FormatError("unknown key '" + std::string(key) + "'", offset);
    const auto res = std::from_chars(val.data(), val.data() + val.size(), *it->second);
    if (res.ec != std::errc() || res.ptr != val.data() + val.size()) {
      throw FormatError("bad number for '" + std::string(key) + "'", offset + eq + 1);
    }
  }
  for (const auto& [key, ptr] : fields) {
    if (!seen[key]) throw FormatError("missing key '" + key + "'", text.size());
  }
  m.validate();
  return m;
}

inline std::string format_latency_model(const LatencyModel& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "propagation_ms=%.17g\nbandwidth_bytes_per_ms=%.17g\nper_image_bytes=%.17g\nper_image_proc_ms=%.17g\n",
                m.propagation_ms, m.bandwidth_bytes_per_ms, m.per_image_bytes, m.per_image_proc_ms);
  return (m.name.empty() ? std::string() : "name=" + m.name + "\n") + buf;
}

inline LatencyModel read_latency_model_file(const std::string& path) {
  const Bytes b = read_file(path);
  return parse_latency_model(std::string_view(reinterpret_cast<const char*>(b.data()), b.size()));
}

struct LatencyPoint {
  std::size_t images = 0;
  double total_ms = 0.0;
};

inline std::vector<LatencyPoint> latency_curve(const LatencyModel& m, std::size_t max_images, std::size_t step = 1) {
  if (step == 0) throw ParameterError("latency curve step must be >= 1");
  std::vector<LatencyPoint> out;
  for (std::size_t n = 0; n <= max_images; n += step) out.push_back({n, simulate_latency(m, n)});
  return out;
}

inline std::string latency_curve_csv(const std::vector<LatencyPoint>& curve) {
  std::string out = "images,total_ms\n";
  char buf[64];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f\n", p.images, p.total_ms);
    out += buf;
  }
  return out;
}

// Frames per second when each frame costs `frame_ms` locally plus one
// simulated transfer.
inline double effective_fps(double frame_ms, const LatencyModel& m) {
  return 1000.0 / (frame_ms + simulate_latency(m, 1));
}

struct BenchReport {
  double fps = 0.0;
  double ms_per_frame = 0.0;
  std::size_t frames = 0;
  std::vector<std::uint32_t> output_crcs;  // one per input image
  bool deterministic = true;               // every repetition reproduced output_crcs
};

inline BenchReport bench_pipeline(const WeightStore& enc, const WeightStore& det, const std::vector<Image>& images,
                                  std::size_t repetitions = 1) {
  if (images.empty()) throw ParameterError("bench_pipeline: no images");
  if (repetitions == 0) throw ParameterError("bench_pipeline: repetitions must be >= 1");
  BenchReport r;
  for (const Image& img : images) r.output_crcs.push_back(crc32_of(save_ppm(enhance(img, enc, det))));
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (crc32_of(save_ppm(enhance(images[i], enc, det))) != r.output_crcs[i]) r.deterministic = false;
    }
  }
  const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  r.frames = repetitions * images.size();
  r.ms_per_frame = ms / static_cast<double>(r.frames);
  r.fps = 1000.0 / std::max(r.ms_per_frame, 1e-9);
  return r;
}

}  // namespace lumafuse
