#pragma once

// Binary losses for the rare-outcome heads. Probability-space functions are the
// reference definitions; `binary_loss` is the fused in-graph version computed from
// logits so that extreme logits stay finite.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "akirisk/autodiff.hpp"
#include "akirisk/error.hpp"

namespace akirisk {

enum class LossKind { weighted_bce, focal, class_balanced };

inline std::string_view loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::weighted_bce: return "weighted-bce";
    case LossKind::focal: return "focal";
    case LossKind::class_balanced: return "class-balanced";
  }
  return "?";
}

inline LossKind parse_loss_kind(std::string_view s) {
  if (s == "weighted-bce" || s == "bce") return LossKind::weighted_bce;
  if (s == "focal") return LossKind::focal;
  if (s == "class-balanced") return LossKind::class_balanced;
  fail(Errc::invalid_config, "unknown loss kind '" + std::string(s) + "'");
}

struct LossHyper {
  double pos_weight = 1.0;         // weighted-bce multiplier on the positive term
  double focal_alpha = 1.0;
  double focal_gamma = 2.0;
  double cb_beta = 0.999;
  double cb_weight_neg = 1.0;      // class-balanced weights, see class_balanced_weights()
  double cb_weight_pos = 1.0;

  void validate() const {
    if (!(pos_weight > 0) || !(focal_alpha > 0) || !(focal_gamma >= 0) || !(cb_beta >= 0 && cb_beta < 1) ||
        !(cb_weight_neg > 0) || !(cb_weight_pos > 0))
      fail(Errc::invalid_hyper, "loss hyperparameters out of range");
  }
};

/// (1-beta)/(1-beta^n_c) per class, normalized so the two weights sum to 2.
inline std::pair<double, double> class_balanced_weights(double beta, std::size_t n_neg, std::size_t n_pos) {
  if (!(beta >= 0 && beta < 1)) fail(Errc::invalid_hyper, "class-balanced beta must lie in [0,1)");
  if (n_neg == 0 || n_pos == 0) fail(Errc::single_class, "class-balanced weights need both classes");
  auto raw = [beta](std::size_t n) { return (1.0 - beta) / (1.0 - std::pow(beta, static_cast<double>(n))); };
  const double wn = raw(n_neg), wp = raw(n_pos), s = wn + wp;
  return {2.0 * wn / s, 2.0 * wp / s};
}

inline constexpr double kProbClip = 1e-7;

inline double clip_prob(double p) { return std::min(std::max(p, kProbClip), 1.0 - kProbClip); }

/// Per-example loss for probability p of the positive class.
inline double loss_fn(LossKind kind, double p, int y, const LossHyper& h) {
  h.validate();
  if (!(p > 0.0 && p < 1.0)) {
    if (!(p >= 0.0 && p <= 1.0)) fail(Errc::invalid_hyper, "probability outside [0,1]");
    p = clip_prob(p);
  }
  switch (kind) {
    case LossKind::weighted_bce:
      return y ? -h.pos_weight * std::log(p) : -std::log(1.0 - p);
    case LossKind::focal: {
      const double pt = y ? p : 1.0 - p;
      return -h.focal_alpha * std::pow(1.0 - pt, h.focal_gamma) * std::log(pt);
    }
    case LossKind::class_balanced:
      return y ? -h.cb_weight_pos * std::log(p) : -h.cb_weight_neg * std::log(1.0 - p);
  }
  return 0.0;
}

inline double bce(double p, int y) {
  p = clip_prob(p);
  return y ? -std::log(p) : -std::log(1.0 - p);
}

/// Factual potential-outcome prediction: exactly y1 when t = 1 and y0 when t = 0.
inline double factual(int t, double y1, double y0) { return t ? y1 : y0; }

namespace detail {

inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace detail

/// Mean per-example loss over a column of logits. `weights` (optional) scales each
/// example before averaging.
inline Var binary_loss(Var logits, std::span<const int> y, LossKind kind, const LossHyper& h,
                       std::span<const double> weights = {}) {
  h.validate();
  const Tensor& z = logits.value();
  const std::size_t n = z.size();
  if (y.size() != n) fail(Errc::shape_mismatch, "binary_loss: label count differs from logit count");
  if (!weights.empty() && weights.size() != n) fail(Errc::shape_mismatch, "binary_loss: weight count");
  std::vector<double> dz(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double zi = z[i], w = weights.empty() ? 1.0 : weights[i];
    const double p = detail::stable_sigmoid(zi);
    const double log_p = -detail::softplus(-zi), log_q = -detail::softplus(zi);
    double l = 0.0, g = 0.0;
    switch (kind) {
      case LossKind::weighted_bce:
      case LossKind::class_balanced: {
        const double wp = kind == LossKind::weighted_bce ? h.pos_weight : h.cb_weight_pos;
        const double wn = kind == LossKind::weighted_bce ? 1.0 : h.cb_weight_neg;
        l = y[i] ? -wp * log_p : -wn * log_q;
        g = y[i] ? wp * (p - 1.0) : wn * p;
        break;
      }
      case LossKind::focal: {
        const double pt = y[i] ? p : 1.0 - p, log_pt = y[i] ? log_p : log_q;
        const double q = y[i] ? 1.0 - p : p;
        const double qg = h.focal_gamma == 0.0 ? 1.0 : std::pow(q, h.focal_gamma);
        l = -h.focal_alpha * qg * log_pt;
        g = h.focal_alpha * (y[i] ? 1.0 : -1.0) * qg * (h.focal_gamma * pt * log_pt - q);
        break;
      }
    }
    total += w * l;
    dz[i] = w * g / static_cast<double>(n);
  }
  const std::size_t zi = logits.id;
  return logits.graph->record("binary-loss", Tensor::scalar(total / static_cast<double>(n)), {logits},
                              [zi, dz = std::move(dz)](Graph& gr, std::size_t self) {
                                const double go = gr.out_grad(self)[0];
                                auto gz = gr.grad_buffer(zi);
                                for (std::size_t i = 0; i < dz.size(); ++i) gz[i] += go * dz[i];
                              });
}

}  // namespace akirisk
