#pragma once

#include <cmath>
#include <string>

#include "lumafuse/image.hpp"
#include "lumafuse/isp.hpp"
#include "lumafuse/tensor.hpp"
#include "lumafuse/weights.hpp"

namespace lumafuse {

// Interleaved HWC image -> planar [3,H,W] float tensor.
inline Tensor image_to_tensor(const Image& img) {
  const std::size_t h = img.height(), w = img.width(), n = h * w;
  Tensor t({3, h, w});
  const auto d = img.data();
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t c = 0; c < 3; ++c) t[c * n + p] = static_cast<float>(d[3 * p + c]);
  }
  return t;
}

// Planar [3,H,W] -> interleaved HWC raster.
inline Raster tensor_to_raster(const Tensor& t) {
  const std::size_t h = t.dim(1), w = t.dim(2), n = h * w;
  Raster r(h, w, 3);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t c = 0; c < 3; ++c) r.values[3 * p + c] = t[c * n + p];
  }
  return r;
}

// Smallest square side that survives the encoder's five 3x3/stride-2 pools.
inline constexpr std::size_t kEncoderMinSide = 63;

inline void check_arch(const WeightStore& w, const ArchSpec& spec) {
  if (w.arch() != spec.id) {
    throw ShapeError("expected " + spec.id + " weights, got '" + w.arch() + "'");
  }
}

// Maps raw head outputs into the hyperparameter box: lo + sigmoid(raw)*(hi-lo).
inline IspParams params_from_logits(const Tensor& raw) {
  IspParams p;
  for (std::size_t i = 0; i < kIspParamCount; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(raw[i])));
    const ParamRange r = kIspParamRanges[i];
    p[i] = r.clamp(r.lo + s * (r.hi - r.lo));
  }
  return p;
}

// conv3x3 -> ReLU -> maxpool(3,2) five times, global max pool, fully
// connected head to six logits, range-mapped sigmoid.
inline IspParams encoder_forward(const Image& img, const WeightStore& w) {
  check_arch(w, encoder_arch());
  if (img.height() < kEncoderMinSide || img.width() < kEncoderMinSide) {
    throw ShapeError("encoder needs at least " + std::to_string(kEncoderMinSide) + "x" +
                     std::to_string(kEncoderMinSide) + " input, got " + std::to_string(img.height()) +
                     "x" + std::to_string(img.width()));
  }
  Tensor x = image_to_tensor(img);
  for (std::size_t i = 1; i < encoder_channels().size(); ++i) {
    const std::string p = "encoder.conv" + std::to_string(i);
    x = conv2d(x, w.at(p + ".weight"), w.at(p + ".bias"));
    relu_inplace(x);
    x = max_pool(x, 3, 2);
  }
  const Tensor pooled = global_max_pool(x);
  return params_from_logits(linear(pooled, w.at("encoder.fc.weight"), w.at("encoder.fc.bias")));
}

namespace detail {

inline Tensor conv_bn(const Tensor& x, const WeightStore& w, const std::string& conv,
                      const std::string& bn) {
  Tensor y = conv2d(x, w.at(conv + ".weight"), w.at(conv + ".bias"));
  batch_norm_inplace(y, w.at(bn + ".gamma"), w.at(bn + ".beta"), w.at(bn + ".mean"),
                     w.at(bn + ".var"));
  relu_inplace(y);
  return y;
}

}  // namespace detail

// Residual raster in (-1, 1), same H x W x 3 as the input.
inline Raster detail_forward(const Image& img, const WeightStore& w) {
  check_arch(w, detail_arch());
  Tensor x = detail::conv_bn(image_to_tensor(img), w, "detail.conv_in", "detail.bn_in");
  for (std::size_t b = 1; b <= kDetailBlocks; ++b) {
    const std::string p = "detail.block" + std::to_string(b);
    Tensor y = detail::conv_bn(x, w, p + ".conv1", p + ".bn1");
    y = detail::conv_bn(y, w, p + ".conv2", p + ".bn2");
    add_inplace(y, x);
    x = std::move(y);
  }
  Tensor out = conv2d(x, w.at("detail.conv_out.weight"), w.at("detail.conv_out.bias"));
  tanh_inplace(out);
  return tensor_to_raster(out);
}

// Which image the detail network sees.
enum class DetailInput {
  Original,   // the raw input (default)
  Enhanced,   // the ISP output
};

struct EnhanceResult {
  Image output;
  IspParams params;
};

// clamp(ISP(img, encoder(img)) + detail(img)).
inline EnhanceResult enhance_with_params(const Image& img, const WeightStore& enc, const WeightStore& det,
                                         DetailInput wiring = DetailInput::Original) {
  const IspParams params = encoder_forward(img, enc);
  const Image base = apply_pipeline(img, params);
  const Raster residual = detail_forward(wiring == DetailInput::Original ? img : base, det);
  Raster sum = base.to_raster();
  for (std::size_t i = 0; i < sum.values.size(); ++i) sum.values[i] += residual.values[i];
  return {Image::clamped(sum), params};
}

inline Image enhance(const Image& img, const WeightStore& enc, const WeightStore& det,
                     DetailInput wiring = DetailInput::Original) {
  return enhance_with_params(img, enc, det, wiring).output;
}

}  // namespace lumafuse
