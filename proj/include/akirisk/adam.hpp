#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "akirisk/error.hpp"
#include "akirisk/tensor.hpp"

namespace akirisk {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment accumulators keyed by parameter name, plus the shared step counter.
struct AdamState {
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

namespace detail {

inline void adam_update(std::span<double> param, std::span<const double> grad, std::vector<double>& m, std::vector<double>& v,
                        std::uint64_t step, const AdamHyper& h) {
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * grad[i];
    v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * grad[i] * grad[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    param[i] -= h.lr * m_hat / (std::sqrt(v_hat) + h.eps);
  }
}

}  // namespace detail

/// One bias-corrected Adam step over every named parameter. Parameters without an entry
/// in `grads` are treated as having zero gradient.
inline void adam_step(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads, AdamState& state,
                      const AdamHyper& hyper) {
  if (!(hyper.lr > 0.0)) fail(Errc::invalid_hyper, "Adam learning rate must be > 0");
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) fail(Errc::shape_mismatch, "gradient for unknown parameter " + name);
    if (it->second.shape() != g.shape()) fail(Errc::shape_mismatch, "gradient shape mismatch for " + name);
  }
  ++state.step;
  for (auto& [name, p] : params) {
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    if (m.empty()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    }
    if (m.size() != p.size() || v.size() != p.size()) fail(Errc::shape_mismatch, "Adam state shape mismatch for " + name);
    auto it = grads.find(name);
    std::vector<double> zeros;
    std::span<const double> g;
    if (it != grads.end()) {
      g = it->second.values();
    } else {
      zeros.assign(p.size(), 0.0);
      g = zeros;
    }
    detail::adam_update(p.values(), g, m, v, state.step, hyper);
  }
}

}  // namespace akirisk
