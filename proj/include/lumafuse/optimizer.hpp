#pragma once
// Projected gradient descent for prompt pairs, ISP hyperparameters and
// refined prompts. All runs are deterministic for fixed inputs and config.

#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "lumafuse/clip_losses.hpp"
#include "lumafuse/errors.hpp"
#include "lumafuse/image.hpp"
#include "lumafuse/isp.hpp"
#include "lumafuse/random.hpp"

namespace lumafuse {

// Direction used by fit_isp_params. GaussNewton scales the MSE gradient by the
// damped inverse of J^T J built from the same pipeline Jacobian.
enum class IspStep { Gradient, GaussNewton };

struct OptimizerConfig {
  double learning_rate = 0.05;
  int max_iters = 500;
  double tolerance = 1e-7;  // stop once |loss change| between iterates drops below this
  std::uint64_t seed = 0;
  IspStep isp_step = IspStep::GaussNewton;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ParameterError("learning_rate must be > 0");
    if (max_iters < 1) throw ParameterError("max_iters must be >= 1");
    if (!(tolerance >= 0.0)) throw ParameterError("tolerance must be >= 0");
  }
};

// Loss at every visited iterate, plus the running best.
struct Trace {
  std::vector<double> loss;
  std::vector<double> best;

  void record(double v) {
    loss.push_back(v);
    best.push_back(best.empty() ? v : std::min(best.back(), v));
  }

  std::string to_csv() const {
    std::string out = "iter,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < loss.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, loss[i]);
      out += buf;
    }
    return out;
  }
};

namespace detail {

inline std::vector<double> unit_step(std::span<const double> v, std::span<const double> grad, double lr) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - lr * grad[i];
  const double n = l2_norm(out);
  if (!(n > 1e-12)) return {v.begin(), v.end()};
  for (double& x : out) x /= n;
  return out;
}

// Shared descent loop. `eval` returns the loss at the current state and fills
// whatever gradient the `step` functor needs.
template <class State, class Eval, class Step>
State descend(State state, const OptimizerConfig& cfg, Trace& trace, Eval eval, Step step) {
  cfg.validate();
  State best = state;
  double best_loss = INFINITY, prev = INFINITY;
  for (int it = 0;; ++it) {
    const double loss = eval(state);
    trace.record(loss);
    if (loss < best_loss) {
      best_loss = loss;
      best = state;
    }
    if (it == cfg.max_iters || std::abs(prev - loss) < cfg.tolerance) break;
    prev = loss;
    state = step(state);
  }
  return best;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage 1: prompt pair fitting under mean loss_li
// ---------------------------------------------------------------------------

struct PromptFit {
  PromptPair pair;
  double initial_loss = 0.0;
  double loss = 0.0;
  Trace trace;
};

inline PromptPair random_prompt_pair(std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> a(dim), b(dim);
  for (double& v : a) v = rng.normal();
  for (double& v : b) v = rng.normal();
  return {Embedding::normalized(a), Embedding::normalized(b)};
}

inline PromptFit optimize_prompt_pair(std::span<const Embedding> low, std::span<const Embedding> normal,
                                      const PromptPair& init, const OptimizerConfig& cfg = {}) {
  if (low.empty() || normal.empty()) throw ParameterError("optimize_prompt_pair: empty embedding list");
  const std::size_t d = init.t_pos.dim();
  for (auto list : {low, normal}) {
    for (const auto& e : list) {
      if (e.dim() != d) throw ShapeError("optimize_prompt_pair: embedding dim mismatch");
    }
  }
  struct State {
    std::vector<double> pos, neg;
  };
  PairLossGrad g;
  PromptFit fit{init, 0.0, 0.0, {}};
  const State best = detail::descend(
      State{{init.t_pos.values().begin(), init.t_pos.values().end()},
            {init.t_neg.values().begin(), init.t_neg.values().end()}},
      cfg, fit.trace,
      [&](const State& s) {
        g = li_loss_grad(s.pos, s.neg, low, normal);
        return g.loss;
      },
      [&](const State& s) {
        return State{detail::unit_step(s.pos, g.grad_pos, cfg.learning_rate),
                     detail::unit_step(s.neg, g.grad_neg, cfg.learning_rate)};
      });
  fit.pair = PromptPair(Embedding::normalized(best.pos), Embedding::normalized(best.neg));
  fit.initial_loss = fit.trace.loss.front();
  fit.loss = fit.trace.best.back();
  return fit;
}

// ---------------------------------------------------------------------------
// Stage 2 surrogate: ISP hyperparameters fitted to a reference by pixel MSE
// ---------------------------------------------------------------------------

struct IspFit {
  IspParams params;
  double initial_loss = 0.0;
  double loss = 0.0;
  Trace trace;
};

inline double mse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("mse: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

struct MseGrad {
  double loss = 0.0;
  std::array<double, kIspParamCount> grad{};
  std::array<std::array<double, kIspParamCount>, kIspParamCount> gauss_newton{};  // 2/N J^T J
};

inline MseGrad isp_mse_grad(const Image& img, const Image& ref, const IspParams& p) {
  if (!img.same_shape(ref)) throw ShapeError("isp_mse_grad: image and reference differ in size");
  const auto run = apply_pipeline_with_jacobian(img, p);
  const auto out = run.output.data(), r = ref.data();
  MseGrad g;
  g.loss = mse(out, r);
  const double scale = 2.0 / static_cast<double>(out.size());
  for (std::size_t k = 0; k < kIspParamCount; ++k) {
    const auto& dk = run.jacobian[k].values;
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += (out[i] - r[i]) * dk[i];
    g.grad[k] = scale * s;
    for (std::size_t j = 0; j <= k; ++j) {
      const auto& dj = run.jacobian[j].values;
      double h = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) h += dk[i] * dj[i];
      g.gauss_newton[k][j] = g.gauss_newton[j][k] = scale * h;
    }
  }
  return g;
}

namespace detail {

inline constexpr double kGaussNewtonDamping = 1e-3;  // relative, on the diagonal
inline constexpr double kGaussNewtonFloor = 1e-9;    // absolute, keeps dead parameters solvable

// Solves (H + damping) x = g by Cholesky.
inline std::array<double, kIspParamCount> gauss_newton_direction(const MseGrad& g) {
  constexpr std::size_t n = kIspParamCount;
  auto a = g.gauss_newton;
  for (std::size_t k = 0; k < n; ++k) a[k][k] += kGaussNewtonDamping * a[k][k] + kGaussNewtonFloor;
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < j; ++k) a[j][j] -= a[j][k] * a[j][k];
    a[j][j] = std::sqrt(a[j][j]);
    for (std::size_t i = j + 1; i < n; ++i) {
      for (std::size_t k = 0; k < j; ++k) a[i][j] -= a[i][k] * a[j][k];
      a[i][j] /= a[j][j];
    }
  }
  std::array<double, n> x = g.grad;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) x[i] -= a[i][k] * x[k];
    x[i] /= a[i][i];
  }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = i + 1; k < n; ++k) x[i] -= a[k][i] * x[k];
    x[i] /= a[i][i];
  }
  return x;
}

}  // namespace detail

inline IspFit fit_isp_params(const Image& img, const Image& ref, const OptimizerConfig& cfg = {},
                             const IspParams& init = IspParams::identity()) {
  if (!img.same_shape(ref)) throw ShapeError("fit_isp_params: image and reference differ in size");
  init.validate();
  MseGrad g;
  IspFit fit{init, 0.0, 0.0, {}};
  fit.params = detail::descend(
      init, cfg, fit.trace,
      [&](const IspParams& p) {
        g = isp_mse_grad(img, ref, p);
        return g.loss;
      },
      [&](const IspParams& p) {
        const auto dir = cfg.isp_step == IspStep::GaussNewton ? detail::gauss_newton_direction(g) : g.grad;
        IspParams next = p;
        for (std::size_t k = 0; k < kIspParamCount; ++k) next[k] = p[k] - cfg.learning_rate * dir[k];
        return next.projected();
      });
  fit.initial_loss = fit.trace.loss.front();
  fit.loss = fit.trace.best.back();
  return fit;
}

// ---------------------------------------------------------------------------
// Iterate series: progressively weaker versions of a final enhancement
// ---------------------------------------------------------------------------

inline constexpr std::array<double, 4> kIterateFactors = {0.2, 0.4, 0.6, 0.8};

struct IterateSeries {
  std::array<IspParams, 4> params;
  std::array<Image, 4> images;  // I_en0 .. I_en3
  IspParams final_params;
  Image final_image;  // I_en
};

inline IspParams interpolate_params(const IspParams& target, double t) {
  const IspParams id = IspParams::identity();
  IspParams p;
  for (std::size_t k = 0; k < kIspParamCount; ++k) p[k] = id[k] + t * (target[k] - id[k]);
  return p;
}

inline IterateSeries generate_iterates(const Image& img, const IspParams& p_final) {
  p_final.validate();
  IterateSeries s{{}, {img, img, img, img}, p_final, apply_pipeline(img, p_final)};
  for (std::size_t k = 0; k < kIterateFactors.size(); ++k) {
    s.params[k] = interpolate_params(p_final, kIterateFactors[k]);
    s.images[k] = apply_pipeline(img, s.params[k]);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Stage 3: prompt refinement under loss_cw
// ---------------------------------------------------------------------------

struct PromptRefinement {
  Embedding prompt;
  double initial_loss = 0.0;
  double loss = 0.0;
  Trace trace;
};

inline PromptRefinement refine_prompt(const Embedding& t_tt, const Embedding& t_neg, const RefinementSet& set,
                                      const Margins& m = {}, const OptimizerConfig& cfg = {},
                                      CwMode mode = CwMode::Literal) {
  set.validate();
  m.validate();
  if (t_tt.dim() != set.dim() || t_neg.dim() != set.dim()) throw ShapeError("refine_prompt: dim mismatch");
  LossGrad g;
  PromptRefinement out{t_tt, 0.0, 0.0, {}};
  const auto best = detail::descend(
      std::vector<double>(t_tt.values().begin(), t_tt.values().end()), cfg, out.trace,
      [&](const std::vector<double>& t) {
        g = cw_loss_grad(t, t_neg, set, m, mode);
        return g.loss;
      },
      [&](const std::vector<double>& t) { return detail::unit_step(t, g.grad, cfg.learning_rate); });
  // The start is returned untouched when nothing beats it.
  out.prompt = (best == std::vector<double>(t_tt.values().begin(), t_tt.values().end()))
                   ? t_tt
                   : Embedding::normalized(best);
  out.initial_loss = out.trace.loss.front();
  out.loss = out.trace.best.back();
  return out;
}

}  // namespace lumafuse
