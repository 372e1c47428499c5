#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "lumafuse/errors.hpp"

namespace lumafuse {

// Row-major n-dimensional float array.
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(element_count(shape_), 0.0f) {}

  Tensor(std::vector<std::size_t> shape, std::vector<float> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string());
    }
  }

  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }

  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }
  std::vector<float>& values() noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) s += (i ? "," : "") + std::to_string(shape_[i]);
    return s + "]";
  }

  bool operator==(const Tensor&) const = default;

private:
  std::vector<std::size_t> shape_;
  std::vector<float> data_;
};

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace detail

// Cross-correlation of x [C,H,W] with w [O,C,K,K] plus bias b [O], zero padding.
//
// Every output accumulates bias first, then taps in (c, ky, kx) order; taps that
// land in the padding are skipped rather than multiplied by zero.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride = 1,
                     std::size_t padding = 1) {
  detail::require(x.rank() == 3, "conv2d: input must be [C,H,W], got " + x.shape_string());
  detail::require(w.rank() == 4, "conv2d: weight must be [O,C,K,K], got " + w.shape_string());
  detail::require(b.rank() == 1, "conv2d: bias must be [O], got " + b.shape_string());
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t O = w.dim(0), K = w.dim(2);
  detail::require(w.dim(1) == C, "conv2d: weight in-channels " + std::to_string(w.dim(1)) +
                                     " != input channels " + std::to_string(C));
  detail::require(w.dim(3) == K, "conv2d: kernel must be square, got " + w.shape_string());
  detail::require(b.dim(0) == O, "conv2d: bias length " + std::to_string(b.dim(0)) +
                                     " != out-channels " + std::to_string(O));
  detail::require(stride >= 1, "conv2d: stride must be >= 1");
  detail::require(H + 2 * padding >= K && W + 2 * padding >= K,
                  "conv2d: input " + x.shape_string() + " smaller than kernel");

  const std::size_t OH = (H + 2 * padding - K) / stride + 1;
  const std::size_t OW = (W + 2 * padding - K) / stride + 1;
  Tensor out({O, OH, OW});
  const long pad = static_cast<long>(padding);

  // Output columns whose tap kx lands inside the image: ox in [lo[kx], hi[kx]).
  std::vector<std::size_t> col_lo(K), col_hi(K);
  for (std::size_t kx = 0; kx < K; ++kx) {
    std::size_t lo = 0;
    while (lo < OW && static_cast<long>(lo * stride + kx) - pad < 0) ++lo;
    std::size_t hi = lo;
    while (hi < OW && static_cast<long>(hi * stride + kx) - pad < static_cast<long>(W)) ++hi;
    col_lo[kx] = lo;
    col_hi[kx] = hi;
  }

  for (std::size_t o = 0; o < O; ++o) {
    float* plane = out.data() + o * OH * OW;
    std::fill(plane, plane + OH * OW, b[o]);
    for (std::size_t c = 0; c < C; ++c) {
      const float* in_plane = x.data() + c * H * W;
      const float* kern = w.data() + (o * C + c) * K * K;
      for (std::size_t ky = 0; ky < K; ++ky) {
        for (std::size_t kx = 0; kx < K; ++kx) {
          const float wv = kern[ky * K + kx];
          for (std::size_t oy = 0; oy < OH; ++oy) {
            const long iy = static_cast<long>(oy * stride + ky) - pad;
            if (iy < 0 || iy >= static_cast<long>(H)) continue;
            const float* in_row = in_plane + static_cast<std::size_t>(iy) * W;
            float* out_row = plane + oy * OW;
            if (stride == 1) {
              const float* src = in_row + kx - padding;
              for (std::size_t ox = col_lo[kx]; ox < col_hi[kx]; ++ox) out_row[ox] += wv * src[ox];
            } else {
              for (std::size_t ox = col_lo[kx]; ox < col_hi[kx]; ++ox) {
                out_row[ox] += wv * in_row[ox * stride + kx - padding];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

// Window max over [C,H,W]; output extent floor((H-k)/s)+1 per axis.
inline Tensor max_pool(const Tensor& x, std::size_t kernel = 3, std::size_t stride = 2) {
  detail::require(x.rank() == 3, "max_pool: input must be [C,H,W], got " + x.shape_string());
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H < kernel || W < kernel) {
    throw ShapeError("max_pool: input " + x.shape_string() + " smaller than kernel " +
                     std::to_string(kernel));
  }
  const std::size_t OH = (H - kernel) / stride + 1, OW = (W - kernel) / stride + 1;
  Tensor out({C, OH, OW});
  for (std::size_t c = 0; c < C; ++c) {
    const float* in = x.data() + c * H * W;
    for (std::size_t oy = 0; oy < OH; ++oy) {
      for (std::size_t ox = 0; ox < OW; ++ox) {
        float m = in[oy * stride * W + ox * stride];
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            m = std::max(m, in[(oy * stride + ky) * W + ox * stride + kx]);
          }
        }
        out[(c * OH + oy) * OW + ox] = m;
      }
    }
  }
  return out;
}

// [C,H,W] -> [C]
inline Tensor global_max_pool(const Tensor& x) {
  detail::require(x.rank() == 3 && x.dim(1) > 0 && x.dim(2) > 0,
                  "global_max_pool: input must be non-empty [C,H,W]");
  const std::size_t C = x.dim(0), n = x.dim(1) * x.dim(2);
  Tensor out({C});
  for (std::size_t c = 0; c < C; ++c) {
    out[c] = *std::max_element(x.data() + c * n, x.data() + (c + 1) * n);
  }
  return out;
}

// y = W x + b with W [M,N].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  detail::require(w.rank() == 2 && x.rank() == 1 && b.rank() == 1,
                  "linear: expected x[N], W[M,N], b[M]");
  const std::size_t M = w.dim(0), N = w.dim(1);
  detail::require(x.dim(0) == N, "linear: input length " + std::to_string(x.dim(0)) +
                                     " != weight columns " + std::to_string(N));
  detail::require(b.dim(0) == M, "linear: bias length mismatch");
  Tensor out({M});
  for (std::size_t m = 0; m < M; ++m) {
    float acc = b[m];
    for (std::size_t n = 0; n < N; ++n) acc += w[m * N + n] * x[n];
    out[m] = acc;
  }
  return out;
}

inline constexpr float kBatchNormEps = 1e-5f;

// Inference-mode batch norm over channel 0 of [C,H,W].
inline void batch_norm_inplace(Tensor& x, const Tensor& gamma, const Tensor& beta,
                               const Tensor& mean, const Tensor& var) {
  const std::size_t C = x.dim(0), n = x.size() / C;
  for (const Tensor* t : {&gamma, &beta, &mean, &var}) {
    detail::require(t->rank() == 1 && t->dim(0) == C, "batch_norm: parameter length mismatch");
  }
  for (std::size_t c = 0; c < C; ++c) {
    const float scale = gamma[c] / std::sqrt(var[c] + kBatchNormEps);
    float* p = x.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) p[i] = scale * (p[i] - mean[c]) + beta[c];
  }
}

inline void relu_inplace(Tensor& x) {
  for (float& v : x.values()) v = v > 0.0f ? v : 0.0f;
}

inline void tanh_inplace(Tensor& x) {
  for (float& v : x.values()) v = std::tanh(v);
}

inline void add_inplace(Tensor& x, const Tensor& y) {
  detail::require(x.shape() == y.shape(), "add: shape mismatch " + x.shape_string() + " vs " +
                                              y.shape_string());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
}

}  // namespace lumafuse
