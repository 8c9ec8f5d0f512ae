#pragma once

// Classical effect estimators on lab-change outcomes anchored to the cohort windows:
// naive difference, covariate-adjusted OLS, IPTW, AIPW, TMLE and a doubly robust ATT,
// with propensity fitting, overlap diagnostics, bootstrap intervals and BH adjustment.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "akirisk/catalog.hpp"
#include "akirisk/cohort.hpp"
#include "akirisk/csv.hpp"
#include "akirisk/error.hpp"
#include "akirisk/regression.hpp"
#include "akirisk/rng.hpp"

namespace akirisk {

/// baseline value of the marker, log1p dx count, log1p proc count, log1p count of
/// medication fills other than the studied codes.
inline constexpr std::size_t kCovariateDim = 4;
using Covariates = std::array<double, kCovariateDim>;

struct LabDeltaRow {
  std::string patient_id;
  Marker marker = Marker::egfr;
  double baseline = 0, followup = 0, delta = 0;
  int treated = 0;
  Covariates x{};
};

namespace detail {

/// Mean of the values recorded on the chosen day, so same-day duplicates do not depend
/// on input order.
inline double value_on(const std::vector<std::pair<int, double>>& pts, int day) {
  double s = 0;
  int n = 0;
  for (const auto& [d, v] : pts)
    if (d == day) s += v, ++n;
  return s / n;
}

}  // namespace detail

/// One row per (patient, marker) with a last observation-window lab and a first
/// prediction-window lab. Lab days are re-based with each row's index_day.
inline std::vector<LabDeltaRow> lab_delta_outcomes(const std::vector<LabRecord>& labs, const std::vector<CohortRow>& cohort,
                                                   const WindowSpec& w, const std::set<std::string>& med_codes) {
  w.validate();
  if (med_codes.empty()) fail(Errc::unknown_ingredient, "no medication codes given");
  std::map<std::string, std::array<std::vector<std::pair<int, double>>, 3>> by_patient;
  for (const auto& l : labs) by_patient[l.patient_id][static_cast<std::size_t>(l.marker)].emplace_back(l.day_offset, l.value);
  std::vector<LabDeltaRow> out;
  for (const auto& row : cohort) {
    auto it = by_patient.find(row.patient_id);
    if (it == by_patient.end()) continue;
    int other_fills = 0;
    for (const auto& t : row.tokens) other_fills += t.domain == Domain::med && !med_codes.count(t.code);
    const int treated = row.exposed_to(med_codes) ? 1 : 0;
    for (Marker m : kMarkers) {
      const auto& pts = it->second[static_cast<std::size_t>(m)];
      int last_obs = std::numeric_limits<int>::min(), first_pred = std::numeric_limits<int>::max();
      for (const auto& [day, v] : pts) {
        const int d = day - row.index_day;
        if (d >= 0 && d < w.observation_days) last_obs = std::max(last_obs, day);
        else if (d >= w.observation_days && d < w.observation_days + w.prediction_days) first_pred = std::min(first_pred, day);
      }
      if (last_obs == std::numeric_limits<int>::min() || first_pred == std::numeric_limits<int>::max()) continue;
      LabDeltaRow r;
      r.patient_id = row.patient_id;
      r.marker = m;
      r.baseline = detail::value_on(pts, last_obs);
      r.followup = detail::value_on(pts, first_pred);
      r.delta = r.followup - r.baseline;
      if (!std::isfinite(r.delta)) continue;
      r.treated = treated;
      r.x = {r.baseline, std::log1p(row.n_dx), std::log1p(row.n_proc), std::log1p(other_fills)};
      out.push_back(std::move(r));
    }
  }
  if (out.empty()) fail(Errc::no_eligible_rows, "no patient has both lab anchors");
  return out;
}

inline std::vector<LabDeltaRow> rows_for_marker(const std::vector<LabDeltaRow>& rows, Marker m) {
  std::vector<LabDeltaRow> out;
  for (const auto& r : rows)
    if (r.marker == m) out.push_back(r);
  return out;
}

enum class Method { naive, ols, iptw, aipw, tmle, dr_att };

inline constexpr std::array<Method, 6> kMethods{Method::naive, Method::ols, Method::iptw,
                                                Method::aipw, Method::tmle, Method::dr_att};

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::naive: return "naive";
    case Method::ols: return "ols";
    case Method::iptw: return "iptw";
    case Method::aipw: return "aipw";
    case Method::tmle: return "tmle";
    case Method::dr_att: return "dr-att";
  }
  return "?";
}

struct CausalEstimate {
  Method method = Method::naive;
  double estimate = 0;
  double ci_low = 0, ci_high = 0;
  double se = 0;  // Welch SE for naive, bootstrap SE otherwise (0 until inference runs)
  double p_value = 1, p_adjusted = 1;
  std::size_t n_treated = 0, n_control = 0;
  std::size_t overlap_violations = 0;
};

namespace detail {

inline std::pair<std::size_t, std::size_t> arm_sizes(const std::vector<LabDeltaRow>& rows) {
  std::size_t t = 0;
  for (const auto& r : rows) t += r.treated != 0;
  return {t, rows.size() - t};
}

inline void require_both_arms(const std::vector<LabDeltaRow>& rows) {
  const auto [t, c] = arm_sizes(rows);
  if (t == 0 || c == 0) fail(Errc::single_arm, "both treated and control rows are required");
}

inline Eigen::MatrixXd covariate_matrix(const std::vector<LabDeltaRow>& rows) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(kCovariateDim));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < kCovariateDim; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i].x[j];
  return x;
}

inline void check_propensities(const std::vector<LabDeltaRow>& rows, std::span<const double> e) {
  if (e.size() != rows.size()) fail(Errc::shape_mismatch, "one propensity per row is required");
  for (double v : e)
    if (!(v > 0.0 && v < 1.0)) fail(Errc::invalid_config, "propensities must lie strictly inside (0,1)");
}

inline CausalEstimate base(Method m, const std::vector<LabDeltaRow>& rows) {
  require_both_arms(rows);
  CausalEstimate c;
  c.method = m;
  std::tie(c.n_treated, c.n_control) = arm_sizes(rows);
  return c;
}

inline double two_sided_normal_p(double z) {
  if (!std::isfinite(z)) return 0.0;
  return std::clamp(2.0 * boost::math::cdf(boost::math::complement(boost::math::normal(), std::abs(z))), 0.0, 1.0);
}

}  // namespace detail

/// Difference of arm means with a Welch t-test.
inline CausalEstimate naive(const std::vector<LabDeltaRow>& rows) {
  CausalEstimate c = detail::base(Method::naive, rows);
  double s[2] = {0, 0}, ss[2] = {0, 0};
  double n[2] = {static_cast<double>(c.n_control), static_cast<double>(c.n_treated)};
  for (const auto& r : rows) s[r.treated != 0] += r.delta;
  const double mean[2] = {s[0] / n[0], s[1] / n[1]};
  for (const auto& r : rows) ss[r.treated != 0] += (r.delta - mean[r.treated != 0]) * (r.delta - mean[r.treated != 0]);
  c.estimate = mean[1] - mean[0];
  const double v1 = n[1] > 1 ? ss[1] / (n[1] - 1) / n[1] : 0.0;
  const double v0 = n[0] > 1 ? ss[0] / (n[0] - 1) / n[0] : 0.0;
  c.se = std::sqrt(v1 + v0);
  if (c.se > 0) {
    const double df_den = (n[1] > 1 ? v1 * v1 / (n[1] - 1) : 0.0) + (n[0] > 1 ? v0 * v0 / (n[0] - 1) : 0.0);
    const double df = df_den > 0 ? (v1 + v0) * (v1 + v0) / df_den : 1.0;
    const double t = std::abs(c.estimate) / c.se;
    c.p_value = std::clamp(2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t(df), t)), 0.0, 1.0);
  } else {
    c.p_value = c.estimate == 0.0 ? 1.0 : 0.0;
  }
  c.ci_low = c.ci_high = c.estimate;
  return c;
}

/// Coefficient of the treatment indicator in a ridge OLS of delta on treatment and covariates.
inline CausalEstimate ols(const std::vector<LabDeltaRow>& rows) {
  CausalEstimate c = detail::base(Method::ols, rows);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(kCovariateDim + 1));
  x.rightCols(kCovariateDim) = detail::covariate_matrix(rows);
  Eigen::VectorXd y(x.rows());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    x(static_cast<Eigen::Index>(i), 0) = rows[i].treated;
    y(static_cast<Eigen::Index>(i)) = rows[i].delta;
  }
  const LinearModel m = fit_ols(x, y);
  c.estimate = m.coef(1) / m.standardizer.scale(0);
  c.ci_low = c.ci_high = c.estimate;
  return c;
}

inline constexpr double kPropensityClip = 0.01;

/// Ridge logistic regression of treatment on covariates, clipped to [0.01, 0.99].
inline std::vector<double> fit_propensity(const std::vector<LabDeltaRow>& rows) {
  detail::require_both_arms(rows);
  Eigen::VectorXd t(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) t(static_cast<Eigen::Index>(i)) = rows[i].treated;
  const Eigen::MatrixXd x = detail::covariate_matrix(rows);
  const Eigen::VectorXd p = fit_logistic_robust(x, t).predict(x);
  std::vector<double> e(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    e[i] = std::clamp(p(static_cast<Eigen::Index>(i)), kPropensityClip, 1.0 - kPropensityClip);
  return e;
}

/// Per-row predictions of the treated (m1) and control (m0) outcome regressions.
struct OutcomePredictions {
  std::vector<double> m1, m0;
};

inline OutcomePredictions zero_outcome_models(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)}; }

/// Ridge OLS (1e-6) of delta on covariates within each arm, predicted for every row.
inline OutcomePredictions fit_outcome_models(const std::vector<LabDeltaRow>& rows) {
  detail::require_both_arms(rows);
  const Eigen::MatrixXd x = detail::covariate_matrix(rows);
  OutcomePredictions out;
  for (int arm : {1, 0}) {
    std::vector<Eigen::Index> idx;
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (rows[i].treated == arm) idx.push_back(static_cast<Eigen::Index>(i));
    Eigen::MatrixXd xa(static_cast<Eigen::Index>(idx.size()), x.cols());
    Eigen::VectorXd ya(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      xa.row(static_cast<Eigen::Index>(k)) = x.row(idx[k]);
      ya(static_cast<Eigen::Index>(k)) = rows[static_cast<std::size_t>(idx[k])].delta;
    }
    const Eigen::VectorXd pred = fit_ols(xa, ya).predict(x);
    (arm ? out.m1 : out.m0).assign(pred.data(), pred.data() + pred.size());
  }
  return out;
}

/// Self-normalized weighted difference with weights 1/e (treated) and 1/(1-e) (control).
inline CausalEstimate iptw(const std::vector<LabDeltaRow>& rows, std::span<const double> e) {
  CausalEstimate c = detail::base(Method::iptw, rows);
  detail::check_propensities(rows, e);
  double sw1 = 0, sy1 = 0, sw0 = 0, sy0 = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].treated) {
      sw1 += 1.0 / e[i];
      sy1 += rows[i].delta / e[i];
    } else {
      sw0 += 1.0 / (1.0 - e[i]);
      sy0 += rows[i].delta / (1.0 - e[i]);
    }
  }
  c.estimate = sy1 / sw1 - sy0 / sw0;
  c.ci_low = c.ci_high = c.estimate;
  return c;
}

namespace detail {

inline void check_outcomes(const std::vector<LabDeltaRow>& rows, const OutcomePredictions& m) {
  if (m.m1.size() != rows.size() || m.m0.size() != rows.size())
    fail(Errc::shape_mismatch, "one outcome prediction per row and arm is required");
}

}  // namespace detail

/// Mean of the doubly robust score m1 - m0 + t(y - m1)/e - (1 - t)(y - m0)/(1 - e).
inline CausalEstimate aipw(const std::vector<LabDeltaRow>& rows, std::span<const double> e, const OutcomePredictions& m) {
  CausalEstimate c = detail::base(Method::aipw, rows);
  detail::check_propensities(rows, e);
  detail::check_outcomes(rows, m);
  double s = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double y = rows[i].delta;
    s += m.m1[i] - m.m0[i];
    s += rows[i].treated ? (y - m.m1[i]) / e[i] : -(y - m.m0[i]) / (1.0 - e[i]);
  }
  c.estimate = s / static_cast<double>(rows.size());
  c.ci_low = c.ci_high = c.estimate;
  return c;
}

inline constexpr double kTmleBound = 1e-4;  // scaled initial fits are kept inside [b, 1-b]

/// One-step TMLE. The outcome is min-max scaled to [0,1], the initial arm fits are
/// fluctuated along H = t/e - (1-t)/(1-e) by a logistic working model with offset,
/// and the g-formula contrast is scaled back to delta units.
inline CausalEstimate tmle(const std::vector<LabDeltaRow>& rows, std::span<const double> e, const OutcomePredictions& m,
                           double* epsilon_out = nullptr) {
  CausalEstimate c = detail::base(Method::tmle, rows);
  detail::check_propensities(rows, e);
  detail::check_outcomes(rows, m);
  double lo = rows.front().delta, hi = lo;
  for (const auto& r : rows) lo = std::min(lo, r.delta), hi = std::max(hi, r.delta);
  if (epsilon_out) *epsilon_out = 0.0;
  if (hi == lo) {
    c.estimate = c.ci_low = c.ci_high = 0.0;
    return c;
  }
  const double range = hi - lo;
  const std::size_t n = rows.size();
  auto scaled = [&](double v) { return std::clamp((v - lo) / range, kTmleBound, 1.0 - kTmleBound); };
  auto logit = [](double p) { return std::log(p / (1.0 - p)); };
  std::vector<double> ys(n), off(n), h(n), q1(n), q0(n);
  for (std::size_t i = 0; i < n; ++i) {
    ys[i] = (rows[i].delta - lo) / range;
    q1[i] = logit(scaled(m.m1[i]));
    q0[i] = logit(scaled(m.m0[i]));
    off[i] = rows[i].treated ? q1[i] : q0[i];
    h[i] = rows[i].treated ? 1.0 / e[i] : -1.0 / (1.0 - e[i]);
  }
  // Newton on the concave working log-likelihood in epsilon, with step halving.
  auto loglik = [&](double eps) {
    double ll = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = off[i] + eps * h[i];
      // y log p + (1-y) log(1-p) written stably
      ll += ys[i] * z - (z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)));
    }
    return ll;
  };
  double eps = 0;
  bool converged = false;
  double ll = loglik(eps);
  for (int it = 0; it < 100; ++it) {
    double g = 0, hess = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = detail::logistic(off[i] + eps * h[i]);
      g += h[i] * (ys[i] - p);
      hess += h[i] * h[i] * p * (1.0 - p);
    }
    if (std::abs(g) <= 1e-10 * static_cast<double>(n)) {
      converged = true;
      break;
    }
    if (!(hess > 0)) break;
    double step = g / hess;
    double next = loglik(eps + step);
    for (int k = 0; k < 50 && !(next >= ll); ++k) step /= 2, next = loglik(eps + step);
    if (!(next >= ll)) break;
    eps += step;
    ll = next;
    if (std::abs(step) < 1e-12 * std::max(1.0, std::abs(eps))) {
      converged = true;
      break;
    }
  }
  if (!converged || !std::isfinite(eps)) fail(Errc::non_convergence, "TMLE fluctuation did not converge");
  double s = 0;
  for (std::size_t i = 0; i < n; ++i)
    s += detail::logistic(q1[i] + eps / e[i]) - detail::logistic(q0[i] - eps / (1.0 - e[i]));
  c.estimate = s / static_cast<double>(n) * range;
  c.ci_low = c.ci_high = c.estimate;
  if (epsilon_out) *epsilon_out = eps;
  return c;
}

struct OverlapSummary {
  double support_low = 0, support_high = 0;
  std::vector<std::uint8_t> flagged;  // per row
  std::size_t flagged_treated = 0, flagged_control = 0;
  std::vector<double> bin_edges;  // n_bins + 1 edges on [0,1]
  std::vector<std::size_t> hist_treated, hist_control;

  std::size_t flagged_total() const noexcept { return flagged_treated + flagged_control; }
};

/// Common support is [max of the arm minima, min of the arm maxima]; rows outside are
/// flagged. When the arms do not overlap at all every row is flagged.
inline OverlapSummary overlap_diagnostics(std::span<const double> e, std::span<const int> treated, std::size_t n_bins = 20) {
  if (e.size() != treated.size()) fail(Errc::shape_mismatch, "propensities and treatment differ in length");
  if (n_bins == 0) fail(Errc::invalid_config, "histograms need at least one bin");
  OverlapSummary o;
  constexpr double inf = std::numeric_limits<double>::infinity();
  double min1 = inf, max1 = -inf, min0 = inf, max0 = -inf;
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (treated[i]) min1 = std::min(min1, e[i]), max1 = std::max(max1, e[i]);
    else min0 = std::min(min0, e[i]), max0 = std::max(max0, e[i]);
  }
  o.support_low = std::max(min1, min0);
  o.support_high = std::min(max1, max0);
  o.flagged.assign(e.size(), 0);
  o.hist_treated.assign(n_bins, 0);
  o.hist_control.assign(n_bins, 0);
  for (std::size_t b = 0; b <= n_bins; ++b) o.bin_edges.push_back(static_cast<double>(b) / static_cast<double>(n_bins));
  for (std::size_t i = 0; i < e.size(); ++i) {
    const bool out = !(e[i] >= o.support_low && e[i] <= o.support_high);
    o.flagged[i] = out;
    if (out) (treated[i] ? o.flagged_treated : o.flagged_control)++;
    const auto b = std::min(n_bins - 1, static_cast<std::size_t>(std::clamp(e[i], 0.0, 1.0) * static_cast<double>(n_bins)));
    (treated[i] ? o.hist_treated : o.hist_control)[b]++;
  }
  return o;
}

inline std::vector<int> treatment_vector(const std::vector<LabDeltaRow>& rows) {
  std::vector<int> t;
  t.reserve(rows.size());
  for (const auto& r : rows) t.push_back(r.treated);
  return t;
}

/// ATT restricted to rows inside the common support:
/// mean over treated of (y - m0) minus the e/(1-e)-weighted control mean of (y - m0).
inline CausalEstimate dr_att(const std::vector<LabDeltaRow>& rows, std::span<const double> e, const OutcomePredictions& m) {
  detail::require_both_arms(rows);
  detail::check_propensities(rows, e);
  detail::check_outcomes(rows, m);
  const auto t = treatment_vector(rows);
  const OverlapSummary ov = overlap_diagnostics(e, t);
  CausalEstimate c;
  c.method = Method::dr_att;
  c.overlap_violations = ov.flagged_total();
  double s1 = 0, n1 = 0, sw0 = 0, s0 = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (ov.flagged[i]) continue;
    const double r = rows[i].delta - m.m0[i];
    if (t[i]) {
      s1 += r;
      n1 += 1;
      ++c.n_treated;
    } else {
      const double w = e[i] / (1.0 - e[i]);
      sw0 += w;
      s0 += w * r;
      ++c.n_control;
    }
  }
  if (c.n_treated == 0 || c.n_control == 0) fail(Errc::single_arm, "no treated or control rows inside the common support");
  c.estimate = s1 / n1 - s0 / sw0;
  c.ci_low = c.ci_high = c.estimate;
  return c;
}

/// Fits the nuisance models on `rows` and returns the point estimates of `methods`.
inline std::vector<double> point_estimates(const std::vector<LabDeltaRow>& rows, std::span<const Method> methods) {
  std::optional<std::vector<double>> e;
  std::optional<OutcomePredictions> m;
  auto props = [&]() -> const std::vector<double>& {
    if (!e) e = fit_propensity(rows);
    return *e;
  };
  auto outs = [&]() -> const OutcomePredictions& {
    if (!m) m = fit_outcome_models(rows);
    return *m;
  };
  std::vector<double> out;
  for (Method k : methods) {
    switch (k) {
      case Method::naive: out.push_back(naive(rows).estimate); break;
      case Method::ols: out.push_back(ols(rows).estimate); break;
      case Method::iptw: out.push_back(iptw(rows, props()).estimate); break;
      case Method::aipw: out.push_back(aipw(rows, props(), outs()).estimate); break;
      case Method::tmle: out.push_back(tmle(rows, props(), outs()).estimate); break;
      case Method::dr_att: out.push_back(dr_att(rows, props(), outs()).estimate); break;
    }
  }
  return out;
}

struct BootstrapResult {
  std::vector<double> ci_low, ci_high, se;  // one entry per estimator output
  std::size_t replicates = 0, failed = 0;
};

/// Percentile intervals from B patient-level resamples with replacement. Replicate b
/// draws from substream(seed, "bootstrap", b). Resamples on which the estimator throws
/// are skipped; more than 10% of them is an error.
template <class Row, class Estimator>
BootstrapResult bootstrap(const Estimator& estimator, const std::vector<Row>& rows, std::size_t B, std::uint64_t seed,
                          double level = 0.95) {
  if (B < 100) fail(Errc::invalid_config, "bootstrap needs at least 100 resamples");
  if (!(level > 0.0 && level < 1.0)) fail(Errc::invalid_config, "confidence level must lie in (0,1)");
  if (rows.empty()) fail(Errc::no_eligible_rows, "bootstrap over zero rows");
  BootstrapResult res;
  res.replicates = B;
  std::vector<std::vector<double>> draws;
  std::vector<Row> sample(rows.size());
  for (std::size_t b = 0; b < B; ++b) {
    Rng rng = substream(seed, "bootstrap", b);
    std::uniform_int_distribution<std::size_t> pick(0, rows.size() - 1);
    for (auto& s : sample) s = rows[pick(rng)];
    try {
      std::vector<double> v = estimator(sample);
      if (!draws.empty() && v.size() != draws.front().size()) fail(Errc::shape_mismatch, "estimator output size changed");
      if (!std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); })) {
        ++res.failed;
        continue;
      }
      draws.push_back(std::move(v));
    } catch (const Error& e) {
      if (e.code() == Errc::shape_mismatch) throw;
      ++res.failed;
    }
  }
  if (static_cast<double>(res.failed) > 0.1 * static_cast<double>(B))
    fail(Errc::degenerate_resample, "estimator failed on " + std::to_string(res.failed) + " of " + std::to_string(B) + " resamples");
  const std::size_t k = draws.front().size(), n = draws.size();
  const double alpha = (1.0 - level) / 2.0;
  // Linear interpolation between order statistics.
  auto quantile = [](const std::vector<double>& s, double q) {
    const double pos = q * static_cast<double>(s.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    const double f = pos - static_cast<double>(i);
    return i + 1 < s.size() ? s[i] + f * (s[i + 1] - s[i]) : s[i];
  };
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<double> col(n);
    for (std::size_t b = 0; b < n; ++b) col[b] = draws[b][j];
    std::sort(col.begin(), col.end());
    res.ci_low.push_back(quantile(col, alpha));
    res.ci_high.push_back(quantile(col, 1.0 - alpha));
    const double mean = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(n);
    double ss = 0;
    for (double v : col) ss += (v - mean) * (v - mean);
    res.se.push_back(n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0);
  }
  return res;
}

/// Single-valued convenience form.
template <class Row>
std::pair<double, double> bootstrap_ci(const std::function<double(const std::vector<Row>&)>& estimator,
                                       const std::vector<Row>& rows, std::size_t B, std::uint64_t seed, double level = 0.95) {
  const auto r = bootstrap([&](const std::vector<Row>& s) { return std::vector<double>{estimator(s)}; }, rows, B, seed, level);
  return {r.ci_low[0], r.ci_high[0]};
}

/// Step-up Benjamini-Hochberg: p(i) * m / i with a running minimum from the largest
/// p down, capped at 1. Output is in input order.
inline std::vector<double> bh_adjust(std::span<const double> p) {
  for (double v : p)
    if (!(v >= 0.0 && v <= 1.0)) fail(Errc::invalid_p, "p-values must lie in [0,1]");
  const std::size_t m = p.size();
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<double> out(m);
  double running = 1.0;
  for (std::size_t k = m; k-- > 0;) {
    running = std::min(running, p[idx[k]] * static_cast<double>(m) / static_cast<double>(k + 1));
    out[idx[k]] = std::clamp(running, p[idx[k]], 1.0);  // rounding in p*m/m must not undercut p
  }
  return out;
}

struct InferenceOptions {
  std::size_t bootstrap = 200;
  std::uint64_t seed = 1;
  double level = 0.95;
};

/// Point estimates of every method plus bootstrap intervals. Naive keeps its Welch
/// p-value; the others use a normal approximation with the bootstrap SE. Intervals are
/// widened to contain the point estimate when the percentile interval misses it.
inline std::vector<CausalEstimate> estimate_all(const std::vector<LabDeltaRow>& rows, std::span<const Method> methods,
                                                const InferenceOptions& opt = {}) {
  const std::vector<double> e = fit_propensity(rows);
  const OutcomePredictions m = fit_outcome_models(rows);
  const auto t = treatment_vector(rows);
  const std::size_t flags = overlap_diagnostics(e, t).flagged_total();
  std::vector<CausalEstimate> out;
  for (Method k : methods) {
    switch (k) {
      case Method::naive: out.push_back(naive(rows)); break;
      case Method::ols: out.push_back(ols(rows)); break;
      case Method::iptw: out.push_back(iptw(rows, e)); break;
      case Method::aipw: out.push_back(aipw(rows, e, m)); break;
      case Method::tmle: out.push_back(tmle(rows, e, m)); break;
      case Method::dr_att: out.push_back(dr_att(rows, e, m)); break;
    }
    out.back().overlap_violations = flags;
  }
  const BootstrapResult b = bootstrap([&](const std::vector<LabDeltaRow>& s) { return point_estimates(s, methods); }, rows,
                                      opt.bootstrap, opt.seed, opt.level);
  for (std::size_t j = 0; j < out.size(); ++j) {
    CausalEstimate& c = out[j];
    c.ci_low = std::min(b.ci_low[j], c.estimate);
    c.ci_high = std::max(b.ci_high[j], c.estimate);
    if (c.method != Method::naive) {
      c.se = b.se[j];
      c.p_value = c.se > 0 ? detail::two_sided_normal_p(c.estimate / c.se) : (c.estimate == 0.0 ? 1.0 : 0.0);
    }
    c.p_adjusted = c.p_value;
  }
  return out;
}

enum class Verdict { consistent_protective, consistent_worsening, mixed, insufficient };

inline std::string_view verdict_name(Verdict v) {
  switch (v) {
    case Verdict::consistent_protective: return "consistent-protective";
    case Verdict::consistent_worsening: return "consistent-worsening";
    case Verdict::mixed: return "mixed";
    case Verdict::insufficient: return "insufficient";
  }
  return "?";
}

struct ValidationRow {
  std::string ingredient;
  Marker marker = Marker::egfr;
  CausalEstimate est;
};

struct MedicationValidation {
  std::string ingredient;
  std::vector<ValidationRow> rows;
  Verdict verdict = Verdict::insufficient;
};

struct ValidationOptions {
  std::size_t min_support = 25;      // per arm and marker
  Method verdict_method = Method::aipw;
  InferenceOptions inference;
};

/// Marker-level direction: +1 protective, -1 worsening, 0 when the interval covers 0.
inline int marker_direction(Marker m, const CausalEstimate& c) {
  if (c.ci_low <= 0.0 && c.ci_high >= 0.0) return 0;
  return (c.estimate > 0 ? 1 : -1) * protective_sign(m);
}

/// Consistent only when every marker has enough support in both arms and all markers
/// point the same way with intervals excluding zero.
inline Verdict consistency_verdict(const std::vector<ValidationRow>& rows, Method method, std::size_t min_support) {
  std::map<Marker, const CausalEstimate*> by_marker;
  for (const auto& r : rows)
    if (r.est.method == method) by_marker[r.marker] = &r.est;
  if (by_marker.size() < kMarkers.size()) return Verdict::insufficient;
  int pos = 0, neg = 0;
  for (const auto& [m, c] : by_marker) {
    if (c->n_treated < min_support || c->n_control < min_support) return Verdict::insufficient;
    const int d = marker_direction(m, *c);
    pos += d > 0;
    neg += d < 0;
  }
  if (pos == static_cast<int>(kMarkers.size())) return Verdict::consistent_protective;
  if (neg == static_cast<int>(kMarkers.size())) return Verdict::consistent_worsening;
  return Verdict::mixed;
}

/// Applies BH separately to each method's p-values across all rows given.
inline void bh_by_method(std::vector<ValidationRow>& rows) {
  for (Method k : kMethods) {
    std::vector<std::size_t> idx;
    std::vector<double> p;
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (rows[i].est.method == k) idx.push_back(i), p.push_back(rows[i].est.p_value);
    const auto adj = bh_adjust(p);
    for (std::size_t j = 0; j < idx.size(); ++j) rows[idx[j]].est.p_adjusted = adj[j];
  }
}

/// Full estimator grid for every marker. Markers whose rows have an arm below
/// min_support are reported with counts only and force an "insufficient" verdict.
inline MedicationValidation validate_medication(const std::vector<LabRecord>& labs, const std::vector<CohortRow>& cohort,
                                                const WindowSpec& w, const MedCatalog& catalog, const std::string& ingredient,
                                                const ValidationOptions& opt = {}) {
  const std::set<std::string> codes = catalog.codes_for(ingredient);
  MedicationValidation v;
  v.ingredient = ingredient;
  std::vector<LabDeltaRow> all;
  try {
    all = lab_delta_outcomes(labs, cohort, w, codes);
  } catch (const Error& e) {
    if (e.code() != Errc::no_eligible_rows) throw;
    return v;
  }
  bool enough = true;
  for (Marker mk : kMarkers) {
    const auto rows = rows_for_marker(all, mk);
    const auto [nt, nc] = detail::arm_sizes(rows);
    if (nt < opt.min_support || nc < opt.min_support) {
      enough = false;
      for (Method k : kMethods) {
        ValidationRow r{ingredient, mk, {}};
        r.est.method = k;
        r.est.n_treated = nt;
        r.est.n_control = nc;
        r.est.p_value = r.est.p_adjusted = std::numeric_limits<double>::quiet_NaN();
        r.est.estimate = r.est.ci_low = r.est.ci_high = std::numeric_limits<double>::quiet_NaN();
        v.rows.push_back(r);
      }
      continue;
    }
    InferenceOptions inf = opt.inference;
    inf.seed = splitmix64(inf.seed ^ fnv1a64(ingredient) ^ static_cast<std::uint64_t>(mk));
    for (const auto& c : estimate_all(rows, kMethods, inf)) v.rows.push_back({ingredient, mk, c});
  }
  std::vector<ValidationRow> tested;
  for (const auto& r : v.rows)
    if (std::isfinite(r.est.p_value)) tested.push_back(r);
  bh_by_method(tested);
  for (auto& r : v.rows)
    for (const auto& t : tested)
      if (t.marker == r.marker && t.est.method == r.est.method) r.est.p_adjusted = t.est.p_adjusted;
  v.verdict = enough ? consistency_verdict(v.rows, opt.verdict_method, opt.min_support) : Verdict::insufficient;
  return v;
}

/// Rows with insufficient support print empty numeric fields.
inline std::string validation_csv(const std::vector<MedicationValidation>& meds, const std::string& meta = "") {
  std::string out = meta + "ingredient,marker,method,estimate,ci_low,ci_high,p,p_bh,n_treated,n_control,overlap_flags,verdict\n";
  auto num = [](double v) { return std::isfinite(v) ? fmt(v) : std::string(); };
  for (const auto& med : meds) {
    for (const auto& r : med.rows) {
      const auto& c = r.est;
      out += r.ingredient + "," + std::string(marker_name(r.marker)) + "," + std::string(method_name(c.method)) + "," +
             num(c.estimate) + "," + num(c.ci_low) + "," + num(c.ci_high) + "," + num(c.p_value) + "," + num(c.p_adjusted) +
             "," + std::to_string(c.n_treated) + "," + std::to_string(c.n_control) + "," +
             std::to_string(c.overlap_violations) + "," + std::string(verdict_name(med.verdict)) + "\n";
    }
  }
  return out;
}

}  // namespace akirisk
