#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lumafuse/errors.hpp"
#include "lumafuse/image.hpp"
#include "lumafuse/weights.hpp"

namespace lumafuse {

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("embedding dim mismatch: " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

// Unit-norm vector standing in for an image or text code.
class Embedding {
public:
  static constexpr double kNormTolerance = 1e-6;

  Embedding() = default;

  // Requires |norm - 1| <= 1e-6.
  explicit Embedding(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw ShapeError("embedding must have positive dimension");
    const double n = l2_norm(values_);
    if (!std::isfinite(n) || std::abs(n - 1.0) > kNormTolerance) {
      throw ParameterError("embedding norm " + std::to_string(n) + " is not 1");
    }
  }

  // Scales `values` to unit length. Zero vectors are rejected.
  static Embedding normalized(std::vector<double> values) {
    const double n = l2_norm(values);
    if (!(n > 0.0) || !std::isfinite(n)) throw ParameterError("cannot normalize a zero or non-finite vector");
    for (double& v : values) v /= n;
    return Embedding(std::move(values));
  }

  std::size_t dim() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  double dot(const Embedding& other) const { return lumafuse::dot(values_, other.values_); }

  bool operator==(const Embedding&) const = default;

private:
  std::vector<double> values_;
};

// Positive ("normal-light", or its refined form) and negative ("low-light")
// prompt embeddings.
struct PromptPair {
  Embedding t_pos;
  Embedding t_neg;

  PromptPair(Embedding pos, Embedding neg) : t_pos(std::move(pos)), t_neg(std::move(neg)) {
    if (t_pos.dim() != t_neg.dim()) throw ShapeError("prompt pair dims differ");
  }

  PromptPair swapped() const { return {t_neg, t_pos}; }
};

struct Margins {
  double p0 = 0.9;  // normal vs low-light reference gap
  double p1 = 0.2;  // normal reference vs enhanced gap
  double p2 = 0.3;  // gap between consecutive enhancement iterates

  void validate() const {
    for (double p : {p0, p1, p2}) {
      if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("margin outside [0,1]");
    }
  }
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// exp(a) / (exp(a) + exp(b)), evaluated without overflow.
inline double softmax2(double a, double b) {
  const double m = std::max(a, b);
  const double ea = std::exp(a - m), eb = std::exp(b - m);
  return ea / (ea + eb);
}

// Probability that the image matches the positive prompt.
inline double similarity_g(const Embedding& e_img, const PromptPair& pair) {
  return softmax2(e_img.dot(pair.t_pos), e_img.dot(pair.t_neg));
}

// Binary cross-entropy over g: -log g for label 1, -log(1-g) for label 0.
inline double loss_li(const Embedding& e_img, int label, const PromptPair& pair) {
  if (label != 0 && label != 1) throw ParameterError("label must be 0 or 1");
  const double dp = e_img.dot(pair.t_pos), dn = e_img.dot(pair.t_neg);
  return label == 1 ? -std::log(softmax2(dp, dn)) : -std::log(softmax2(dn, dp));
}

// -ln( exp(e.t_tt) / (exp(e.t_pos) + exp(e.t_neg)) ). The numerator prompt is
// the refined one while the denominator keeps the original pair.
inline double loss_ehc(const Embedding& e_enhanced, const Embedding& t_tt, const PromptPair& pair) {
  const double a = e_enhanced.dot(t_tt);
  const double dp = e_enhanced.dot(pair.t_pos), dn = e_enhanced.dot(pair.t_neg);
  const double m = std::max(dp, dn);
  return -a + m + std::log(std::exp(dp - m) + std::exp(dn - m));
}

// Correlation of an image with the refined prompt, in (0, 1).
inline double correlation_r(const Embedding& e_img, const Embedding& t_tt, const Embedding& t_neg) {
  return softmax2(e_img.dot(t_tt), e_img.dot(t_neg));
}

enum class CwMode {
  Literal,         // S1 = p1 - (r_T - r_F)
  TextConsistent,  // S1 = p1 - (r_T - r_en)
};

// r values entering the cue-word ranking loss.
struct Correlations {
  double r_T = 0;    // normal-light reference
  double r_F = 0;    // low-light input
  double r_en = 0;   // final enhancement
  double r_en3 = 0;  // iterates, strongest to weakest
  double r_en2 = 0;
  double r_en1 = 0;
  double r_en0 = 0;

  std::array<double, 7> to_array() const { return {r_T, r_F, r_en, r_en3, r_en2, r_en1, r_en0}; }
};

// The six hinge arguments S_0..S_5.
inline std::array<double, 6> cw_terms(const Correlations& r, const Margins& m, CwMode mode = CwMode::Literal) {
  return {m.p0 - (r.r_T - r.r_F),
          mode == CwMode::Literal ? m.p1 - (r.r_T - r.r_F) : m.p1 - (r.r_T - r.r_en),
          m.p2 - (r.r_en - r.r_en3),
          m.p2 - (r.r_en3 - r.r_en2),
          m.p2 - (r.r_en2 - r.r_en1),
          m.p2 - (r.r_en1 - r.r_en0)};
}

// Margin ranking loss: sum of max(0, S_i).
inline double loss_cw(const Correlations& r, const Margins& m = {}, CwMode mode = CwMode::Literal) {
  m.validate();
  for (double v : r.to_array()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ParameterError("correlation " + std::to_string(v) + " outside [0,1]");
  }
  double total = 0.0;
  for (double s : cw_terms(r, m, mode)) total += std::max(0.0, s);
  return total;
}

// ---------------------------------------------------------------------------
// Gradients with respect to raw prompt vectors
// ---------------------------------------------------------------------------

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

// Image embeddings the refined prompt is ranked against.
struct RefinementSet {
  Embedding normal;                 // I_T
  Embedding low;                    // I_F
  std::array<Embedding, 5> series;  // I_en0, I_en1, I_en2, I_en3, I_en

  std::size_t dim() const { return normal.dim(); }

  void validate() const {
    const std::size_t d = dim();
    if (low.dim() != d) throw ShapeError("refinement set: low-light embedding dim mismatch");
    for (const auto& e : series) {
      if (e.dim() != d) throw ShapeError("refinement set: series embedding dim mismatch");
    }
  }
};

// loss_cw as a function of an unconstrained prompt vector t (the refined
// prompt); gradient of max(0, S) at S = 0 is taken as 0.
inline LossGrad cw_loss_grad(std::span<const double> t, const Embedding& t_neg, const RefinementSet& set,
                             const Margins& m = {}, CwMode mode = CwMode::Literal) {
  set.validate();
  const std::size_t d = t.size();
  if (t_neg.dim() != d || set.dim() != d) throw ShapeError("cw_loss_grad: dim mismatch");

  // Images in Correlations order: T, F, en, en3, en2, en1, en0.
  const std::array<const Embedding*, 7> imgs = {&set.normal,    &set.low,       &set.series[4], &set.series[3],
                                                &set.series[2], &set.series[1], &set.series[0]};
  std::array<double, 7> r{};
  for (std::size_t i = 0; i < 7; ++i) {
    r[i] = softmax2(dot(imgs[i]->values(), t), imgs[i]->dot(t_neg));
  }
  const Correlations c{r[0], r[1], r[2], r[3], r[4], r[5], r[6]};
  const auto s = cw_terms(c, m, mode);

  // Each S_j = P - (r[a] - r[b]).
  constexpr std::array<std::pair<int, int>, 6> kLiteralPairs = {{{0, 1}, {0, 1}, {2, 3}, {3, 4}, {4, 5}, {5, 6}}};
  auto pairs = kLiteralPairs;
  if (mode == CwMode::TextConsistent) pairs[1] = {0, 2};

  std::array<double, 7> coeff{};  // d loss / d r[i]
  LossGrad out;
  for (std::size_t j = 0; j < 6; ++j) {
    if (s[j] > 0.0) {
      out.loss += s[j];
      coeff[pairs[j].first] -= 1.0;
      coeff[pairs[j].second] += 1.0;
    }
  }
  out.grad.assign(d, 0.0);
  for (std::size_t i = 0; i < 7; ++i) {
    if (coeff[i] == 0.0) continue;
    const double k = coeff[i] * r[i] * (1.0 - r[i]);
    const auto e = imgs[i]->values();
    for (std::size_t q = 0; q < d; ++q) out.grad[q] += k * e[q];
  }
  return out;
}

struct PairLossGrad {
  double loss = 0.0;
  std::vector<double> grad_pos;
  std::vector<double> grad_neg;
};

// Mean loss_li over normal (label 1) and low-light (label 0) embeddings,
// with gradients for unconstrained prompt vectors.
inline PairLossGrad li_loss_grad(std::span<const double> t_pos, std::span<const double> t_neg,
                                 std::span<const Embedding> low, std::span<const Embedding> normal) {
  const std::size_t d = t_pos.size();
  if (t_neg.size() != d) throw ShapeError("li_loss_grad: prompt dims differ");
  const std::size_t n = low.size() + normal.size();
  if (n == 0) throw ParameterError("li_loss_grad: no embeddings");
  PairLossGrad out{0.0, std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  const auto accumulate = [&](const Embedding& e, int label) {
    const double dp = dot(e.values(), t_pos), dn = dot(e.values(), t_neg);
    const double g = softmax2(dp, dn);
    // d(-log g)/d(dp) = -(1-g); d(-log(1-g))/d(dp) = g. dn gets the opposite sign.
    double k;
    if (label == 1) {
      out.loss += -std::log(g);
      k = -softmax2(dn, dp);
    } else {
      out.loss += -std::log(softmax2(dn, dp));
      k = g;
    }
    const auto v = e.values();
    for (std::size_t q = 0; q < d; ++q) {
      out.grad_pos[q] += k * v[q];
      out.grad_neg[q] -= k * v[q];
    }
  };
  for (const auto& e : normal) accumulate(e, 1);
  for (const auto& e : low) accumulate(e, 0);
  const double inv = 1.0 / static_cast<double>(n);
  out.loss *= inv;
  for (auto* g : {&out.grad_pos, &out.grad_neg}) {
    for (double& v : *g) v *= inv;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Deterministic stand-in image encoder
// ---------------------------------------------------------------------------

inline constexpr std::size_t kTestEncoderGrid = 8;
inline constexpr std::size_t kTestEmbeddingDim = kTestEncoderGrid * kTestEncoderGrid * 3;

// Average-pool to 8x8x3, subtract the global mean, L2-normalize. A flat image
// maps to the first basis vector.
inline Embedding test_encoder(const Image& img) {
  const std::size_t H = img.height(), W = img.width(), G = kTestEncoderGrid;
  if (img.empty()) throw ShapeError("test_encoder: empty image");
  std::vector<double> pooled(kTestEmbeddingDim, 0.0);
  for (std::size_t gy = 0; gy < G; ++gy) {
    const std::size_t y0 = gy * H / G, y1 = std::max((gy + 1) * H / G, y0 + 1);
    for (std::size_t gx = 0; gx < G; ++gx) {
      const std::size_t x0 = gx * W / G, x1 = std::max((gx + 1) * W / G, x0 + 1);
      const double count = static_cast<double>((y1 - y0) * (x1 - x0));
      for (std::size_t c = 0; c < 3; ++c) {
        double s = 0.0;
        for (std::size_t y = y0; y < y1; ++y) {
          for (std::size_t x = x0; x < x1; ++x) s += img.at(y, x, c);
        }
        pooled[(gy * G + gx) * 3 + c] = s / count;
      }
    }
  }
  const double mean = mean_value(pooled);
  for (double& v : pooled) v -= mean;
  const double n = l2_norm(pooled);
  if (n < 1e-12) {
    std::vector<double> basis(kTestEmbeddingDim, 0.0);
    basis[0] = 1.0;
    return Embedding(std::move(basis));
  }
  for (double& v : pooled) v /= n;
  return Embedding(std::move(pooled));
}

// ---------------------------------------------------------------------------
// Embedding tables and the EMB1 file
//
//   "EMB1" | u32 count | u32 dim | count x { u16 name_len | name | dim x f32 }
// ---------------------------------------------------------------------------

class EmbeddingTable {
public:
  void add(std::string name, Embedding e) {
    if (!entries_.empty() && e.dim() != entries_.front().second.dim()) {
      throw ShapeError("embedding '" + name + "' has dim " + std::to_string(e.dim()) + ", table uses " +
                       std::to_string(dim()));
    }
    if (find(name)) throw ParameterError("duplicate embedding name '" + name + "'");
    entries_.emplace_back(std::move(name), std::move(e));
  }

  const Embedding* find(const std::string& name) const {
    for (const auto& [n, e] : entries_) {
      if (n == name) return &e;
    }
    return nullptr;
  }

  const Embedding& at(const std::string& name) const {
    const Embedding* e = find(name);
    if (!e) throw std::out_of_range("no embedding named '" + name + "'");
    return *e;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t dim() const noexcept { return entries_.empty() ? 0 : entries_.front().second.dim(); }
  const std::vector<std::pair<std::string, Embedding>>& entries() const noexcept { return entries_; }

private:
  std::vector<std::pair<std::string, Embedding>> entries_;
};

struct LoadedEmbeddings {
  EmbeddingTable table;
  std::vector<std::string> warnings;  // rows re-normalized on load
};

inline constexpr char kEmbeddingMagic[4] = {'E', 'M', 'B', '1'};
inline constexpr double kEmbeddingWarnDeviation = 1e-4;
inline constexpr double kEmbeddingRejectDeviation = 1e-2;

inline Bytes save_embeddings(const EmbeddingTable& table) {
  detail::ByteWriter w;
  w.put_bytes(kEmbeddingMagic, 4);
  w.put(static_cast<std::uint32_t>(table.size()));
  w.put(static_cast<std::uint32_t>(table.dim()));
  for (const auto& [name, e] : table.entries()) {
    w.put(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    for (double v : e.values()) w.put(static_cast<float>(v));
  }
  return std::move(w.out);
}

// Rows are always re-normalized (f32 storage cannot hold exact unit norm);
// a deviation above 1e-4 is reported, above 1e-2 rejected.
inline LoadedEmbeddings load_embeddings(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kEmbeddingMagic, 4) != 0) {
    throw FormatError("bad embedding file magic, expected EMB1", 0);
  }
  detail::ByteReader rd(bytes);
  rd.take(4, "magic");
  const auto count = rd.get<std::uint32_t>("entry count");
  const auto dim = rd.get<std::uint32_t>("dimension");
  if (dim == 0) throw FormatError("embedding dimension is zero", 8);
  LoadedEmbeddings out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t row_at = rd.pos();
    const auto name_len = rd.get<std::uint16_t>("name length");
    const auto nb = rd.take(name_len, "name");
    std::string name(nb.begin(), nb.end());
    if (static_cast<std::size_t>(dim) > rd.remaining() / sizeof(float)) {
      throw FormatError("truncated values for embedding '" + name + "'", rd.pos());
    }
    std::vector<double> values(dim);
    for (auto& v : values) {
      v = rd.get<float>("value");
      if (!std::isfinite(v)) throw FormatError("non-finite value in embedding '" + name + "'", row_at);
    }
    const double n = l2_norm(values);
    const double dev = std::abs(n - 1.0);
    if (!(dev <= kEmbeddingRejectDeviation)) {
      throw FormatError("embedding '" + name + "' has norm " + std::to_string(n), row_at);
    }
    if (dev > kEmbeddingWarnDeviation) {
      out.warnings.push_back("embedding '" + name + "' norm " + std::to_string(n) + " re-normalized");
    }
    try {
      out.table.add(std::move(name), Embedding::normalized(std::move(values)));
    } catch (const ParameterError& e) {
      throw FormatError(e.what(), row_at);
    }
  }
  if (rd.remaining() != 0) throw FormatError("trailing bytes after last embedding", rd.pos());
  return out;
}

// Source of image and prompt embeddings.
class EmbeddingProvider {
public:
  virtual ~EmbeddingProvider() = default;
  virtual Embedding encode_image(const Image& img) const = 0;
  virtual Embedding lookup(const std::string& name) const = 0;
};

// Deterministic provider: test_encoder for images, a fixed table for prompts.
class TestEmbeddingProvider final : public EmbeddingProvider {
public:
  explicit TestEmbeddingProvider(EmbeddingTable prompts = {}) : prompts_(std::move(prompts)) {}

  Embedding encode_image(const Image& img) const override { return test_encoder(img); }
  Embedding lookup(const std::string& name) const override { return prompts_.at(name); }

private:
  EmbeddingTable prompts_;
};

}  // namespace lumafuse
