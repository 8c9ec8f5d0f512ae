#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "akirisk/causal.hpp"
#include "akirisk/synthgen.hpp"
#include "support/metric_oracles.hpp"

namespace akirisk {
namespace {

CohortRow cohort_row(const std::string& id, int index_day, std::vector<std::string> meds) {
  CohortRow r;
  r.patient_id = id;
  r.index_day = index_day;
  r.n_dx = 3;
  for (const auto& m : meds) r.tokens.push_back({10, Domain::med, m});
  r.n_med = static_cast<int>(meds.size());
  std::sort(meds.begin(), meds.end());
  meds.erase(std::unique(meds.begin(), meds.end()), meds.end());
  r.exposures = meds;
  return r;
}

const WindowSpec kWin{90, 730};

TEST(LabDelta, AnchorsAreLastObservationAndFirstPredictionLab) {
  const auto row = cohort_row("P1", 1000, {"RX_A", "RX_B", "RX_B"});
  const std::vector<LabRecord> labs{{"P1", 1010, Marker::egfr, 70}, {"P1", 1080, Marker::egfr, 60},
                                    {"P1", 1200, Marker::egfr, 40}, {"P1", 1095, Marker::egfr, 55},
                                    {"P1", 1050, Marker::bun, 20}};
  const auto rows = lab_delta_outcomes(labs, {row}, kWin, {"RX_A"});
  ASSERT_EQ(rows.size(), 1u);  // BUN has no follow-up value
  EXPECT_EQ(rows[0].marker, Marker::egfr);
  EXPECT_EQ(rows[0].baseline, 60);
  EXPECT_EQ(rows[0].followup, 55);
  EXPECT_EQ(rows[0].delta, -5);
  EXPECT_EQ(rows[0].treated, 1);
  EXPECT_EQ(rows[0].x[0], 60);
  EXPECT_DOUBLE_EQ(rows[0].x[1], std::log1p(3));
  EXPECT_DOUBLE_EQ(rows[0].x[3], std::log1p(2));  // two fills of another code
}

TEST(LabDelta, WindowEdgesAndExclusions) {
  const auto a = cohort_row("A", 0, {});
  const auto b = cohort_row("B", 0, {"RX_A"});
  // A: labs at the last observation day and the last prediction day. B: only an
  // observation-window lab, and a lab past the prediction window.
  const std::vector<LabRecord> labs{{"A", 89, Marker::creatinine, 1.0}, {"A", 819, Marker::creatinine, 1.5},
                                    {"B", 30, Marker::creatinine, 1.0}, {"B", 820, Marker::creatinine, 2.0}};
  const auto rows = lab_delta_outcomes(labs, {a, b}, kWin, {"RX_A"});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].patient_id, "A");
  EXPECT_DOUBLE_EQ(rows[0].delta, 0.5);
  EXPECT_EQ(rows[0].treated, 0);

  try {
    lab_delta_outcomes({{"B", 30, Marker::egfr, 1.0}}, {b}, kWin, {"RX_A"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::no_eligible_rows);
  }
}

TEST(LabDelta, SameDayDuplicatesAreAveraged) {
  const auto a = cohort_row("A", 0, {});
  const std::vector<LabRecord> labs{{"A", 50, Marker::bun, 10}, {"A", 50, Marker::bun, 14}, {"A", 100, Marker::bun, 20}};
  auto rev = labs;
  std::reverse(rev.begin(), rev.end());
  EXPECT_EQ(lab_delta_outcomes(labs, {a}, kWin, {"X"})[0].baseline, 12);
  EXPECT_EQ(lab_delta_outcomes(rev, {a}, kWin, {"X"})[0].delta, 8);
}

std::vector<LabDeltaRow> arms(std::vector<double> treated, std::vector<double> control) {
  std::vector<LabDeltaRow> rows;
  int i = 0;
  for (double v : treated) {
    LabDeltaRow r;
    r.patient_id = "T" + std::to_string(i++);
    r.treated = 1;
    r.delta = v;
    r.x = {static_cast<double>(i % 3), 1.0 * (i % 2), 0.5 * i, 0.0};
    rows.push_back(r);
  }
  for (double v : control) {
    LabDeltaRow r;
    r.patient_id = "C" + std::to_string(i++);
    r.delta = v;
    r.x = {static_cast<double>(i % 3), 1.0 * (i % 2), 0.5 * i, 1.0};
    rows.push_back(r);
  }
  return rows;
}

TEST(Naive, Examples) {
  EXPECT_DOUBLE_EQ(naive(arms({2, 4}, {1, 1})).estimate, 2.0);
  EXPECT_DOUBLE_EQ(naive(arms({1, 2, 3}, {1, 2, 3})).estimate, 0.0);
  EXPECT_DOUBLE_EQ(naive(arms({1, 2, 3}, {1, 2, 3})).p_value, 1.0);
  try {
    naive(arms({1, 2}, {}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::single_arm);
  }
}

TEST(Naive, WelchPValueMatchesReference) {
  // Reference values from an independent Welch t-test implementation.
  EXPECT_NEAR(naive(arms({2, 4, 6}, {1, 2, 3})).p_value, 0.2208808404940958, 1e-10);
  EXPECT_NEAR(naive(arms({2.5, 4, 6, 7.25, 1}, {1, 2, 3, 0.5})).p_value, 0.09474334784480877, 1e-10);
  const auto c = naive(arms({2, 4, 6}, {1, 2, 3}));
  EXPECT_NEAR(c.se, std::sqrt(4.0 / 3 + 1.0 / 3), 1e-12);
}

// Randomized or confounded rows with a known additive effect.
std::vector<LabDeltaRow> simulated(std::size_t n, std::uint64_t seed, double effect, double confounding) {
  Rng rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<LabDeltaRow> rows;
  for (std::size_t i = 0; i < n; ++i) {
    LabDeltaRow r;
    r.patient_id = std::to_string(i);
    const double s = z(rng), u = z(rng);
    r.x = {s, u, z(rng), 0.0};
    r.treated = bernoulli(rng, 1.0 / (1.0 + std::exp(-confounding * s)));
    r.delta = effect * r.treated + 2.0 * s + 0.5 * u + z(rng);
    rows.push_back(r);
  }
  return rows;
}

TEST(Propensity, IndependentCovariatesGiveTreatedFraction) {
  auto rows = simulated(40000, 1, 0.0, 0.0);
  const auto e = fit_propensity(rows);
  double frac = 0;
  for (const auto& r : rows) frac += r.treated;
  frac /= static_cast<double>(rows.size());
  for (double v : e) EXPECT_NEAR(v, frac, 0.02);
  EXPECT_NEAR(std::accumulate(e.begin(), e.end(), 0.0) / static_cast<double>(e.size()), frac, 1e-8);
  EXPECT_EQ(fit_propensity(rows), e);
}

TEST(Propensity, SeparatingCovariateHitsClipBounds) {
  auto rows = arms(std::vector<double>(1000, 1.0), std::vector<double>(1000, 0.0));
  for (auto& r : rows) r.x = {r.treated ? 5.0 : -5.0, 0, 0, 0};
  const auto e = fit_propensity(rows);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_TRUE(std::isfinite(e[i]));
    EXPECT_EQ(e[i], rows[i].treated ? 1.0 - kPropensityClip : kPropensityClip);
  }
}

TEST(Iptw, ConstantPropensityEqualsNaive) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto rows = simulated(20 + rng() % 100, rng(), 1.0, 1.0);
    if (detail::arm_sizes(rows).first == 0 || detail::arm_sizes(rows).second == 0) continue;
    const double c = 0.05 + 0.9 * uniform01(rng);
    const std::vector<double> e(rows.size(), c);
    EXPECT_NEAR(iptw(rows, e).estimate, naive(rows).estimate, 1e-12);
  }
}

TEST(Iptw, ExtremeWeightIsFlagged) {
  auto rows = arms({1.0}, std::vector<double>(9, 0.0));
  std::vector<double> e(rows.size(), 0.3);
  e[0] = 0.01;
  const auto ov = overlap_diagnostics(e, treatment_vector(rows));
  EXPECT_EQ(ov.flagged[0], 1);
  EXPECT_EQ(ov.flagged_total(), 10u);  // the treated arm lies below all controls
  EXPECT_DOUBLE_EQ(iptw(rows, e).estimate, 1.0);
}

TEST(Aipw, ZeroOutcomeModelsGiveHorvitzThompsonScore) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto rows = simulated(200, rng(), 1.5, 1.0);
    std::vector<double> e(rows.size());
    for (auto& v : e) v = 0.1 + 0.8 * uniform01(rng);
    double s = 0;
    for (std::size_t i = 0; i < rows.size(); ++i)
      s += rows[i].treated ? rows[i].delta / e[i] : -rows[i].delta / (1 - e[i]);
    EXPECT_NEAR(aipw(rows, e, zero_outcome_models(rows.size())).estimate, s / rows.size(), 1e-12);
  }
}

TEST(Aipw, CorrectOutcomeModelSurvivesBrokenPropensity) {
  const auto rows = simulated(20000, 7, 2.0, 1.5);
  const std::vector<double> half(rows.size(), 0.5);
  EXPECT_GT(std::abs(naive(rows).estimate - 2.0), 1.0);
  EXPECT_NEAR(aipw(rows, half, fit_outcome_models(rows)).estimate, 2.0, 0.1);
  EXPECT_NEAR(iptw(rows, fit_propensity(rows)).estimate, 2.0, 0.25);
  EXPECT_NEAR(ols(rows).estimate, 2.0, 0.1);
}

TEST(Tmle, ConstantOutcomeGivesZero) {
  auto rows = simulated(100, 8, 0.0, 1.0);
  for (auto& r : rows) r.delta = 3.0;
  const auto e = fit_propensity(rows);
  EXPECT_EQ(tmle(rows, e, fit_outcome_models(rows)).estimate, 0.0);
  EXPECT_NEAR(dr_att(rows, e, fit_outcome_models(rows)).estimate, 0.0, 1e-9);
  EXPECT_EQ(naive(rows).estimate, 0.0);
}

TEST(Tmle, ZeroFluctuationEqualsPlugIn) {
  // With constant propensities, per-arm OLS residuals already solve the score, so the
  // fluctuation is zero and TMLE reduces to the g-formula mean of m1 - m0.
  auto rows = simulated(500, 9, 1.0, 0.0);
  Rng rng(90);
  std::normal_distribution<double> z(0.0, 1.0);
  // weak covariate effects keep the fitted values well inside the outcome range
  for (auto& r : rows) r.delta = r.treated + 0.3 * r.x[0] + 0.3 * r.x[1] + z(rng);
  const std::vector<double> e(rows.size(), 0.4);
  const auto m = fit_outcome_models(rows);
  double eps = 1;
  const double est = tmle(rows, e, m, &eps).estimate;
  double plug = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) plug += m.m1[i] - m.m0[i];
  plug /= static_cast<double>(rows.size());
  EXPECT_NEAR(eps, 0.0, 1e-6);
  EXPECT_NEAR(est, plug, 1e-6);
}

TEST(Tmle, RecoversEffectUnderConfounding) {
  const auto rows = simulated(20000, 10, -1.0, 1.5);
  const auto e = fit_propensity(rows);
  EXPECT_NEAR(tmle(rows, e, fit_outcome_models(rows)).estimate, -1.0, 0.15);
}

TEST(DrAtt, RandomizedMatchesNaiveAndConstantIsZero) {
  const auto rows = simulated(20000, 11, 1.0, 0.0);
  const auto e = fit_propensity(rows);
  const auto m = fit_outcome_models(rows);
  EXPECT_NEAR(dr_att(rows, e, m).estimate, naive(rows).estimate, 0.1);
  EXPECT_NEAR(dr_att(rows, e, m).estimate, aipw(rows, e, m).estimate, 0.1);
}

TEST(DrAtt, RowsOutsideSupportAreExcluded) {
  // Controls at e=0.05 have no treated counterpart; they are dropped and flagged.
  auto rows = arms({3, 5, 4, 6}, {1, 2, 1, 2, 100, 100});
  const std::vector<double> e{0.4, 0.5, 0.6, 0.5, 0.4, 0.5, 0.6, 0.5, 0.05, 0.05};
  const auto m = zero_outcome_models(rows.size());
  const auto c = dr_att(rows, e, m);
  EXPECT_EQ(c.overlap_violations, 2u);
  EXPECT_EQ(c.n_treated, 4u);
  EXPECT_EQ(c.n_control, 4u);
  const double w[4] = {0.4 / 0.6, 1.0, 1.5, 1.0};
  const double ctrl = (w[0] * 1 + w[1] * 2 + w[2] * 1 + w[3] * 2) / (w[0] + w[1] + w[2] + w[3]);
  EXPECT_NEAR(c.estimate, 4.5 - ctrl, 1e-12);
}

TEST(Overlap, IdenticalAndDisjointDistributions) {
  const std::vector<double> e{0.2, 0.4, 0.6, 0.2, 0.4, 0.6};
  const std::vector<int> t{1, 1, 1, 0, 0, 0};
  EXPECT_EQ(overlap_diagnostics(e, t).flagged_total(), 0u);
  const std::vector<double> d{0.1, 0.2, 0.3, 0.7, 0.8, 0.9};
  EXPECT_EQ(overlap_diagnostics(d, t).flagged_total(), 6u);
}

TEST(Overlap, HandBuiltSupportBounds) {
  // treated in [0.3, 0.9], control in [0.1, 0.7] -> support [0.3, 0.7]
  const std::vector<double> e{0.3, 0.5, 0.9, 0.1, 0.7, 0.35};
  const std::vector<int> t{1, 1, 1, 0, 0, 0};
  const auto o = overlap_diagnostics(e, t, 10);
  EXPECT_DOUBLE_EQ(o.support_low, 0.3);
  EXPECT_DOUBLE_EQ(o.support_high, 0.7);
  EXPECT_EQ(o.flagged, (std::vector<std::uint8_t>{0, 0, 1, 1, 0, 0}));
  EXPECT_EQ(o.flagged_treated, 1u);
  EXPECT_EQ(o.flagged_control, 1u);
  EXPECT_EQ(o.hist_treated[9], 1u);
  EXPECT_EQ(o.hist_control[1], 1u);
  EXPECT_EQ(o.bin_edges.size(), 11u);
}

double mean_delta(const std::vector<LabDeltaRow>& rows) {
  double s = 0;
  for (const auto& r : rows) s += r.delta;
  return s / static_cast<double>(rows.size());
}

TEST(Bootstrap, ConstantRowsGiveZeroWidthAndSeedIsReproducible) {
  auto rows = arms(std::vector<double>(20, 2.0), std::vector<double>(20, 2.0));
  const auto ci = bootstrap_ci<LabDeltaRow>(mean_delta, rows, 100, 3);
  EXPECT_EQ(ci.first, 2.0);
  EXPECT_EQ(ci.second, 2.0);

  const auto sim = simulated(150, 12, 1.0, 0.0);
  EXPECT_EQ(bootstrap_ci<LabDeltaRow>(mean_delta, sim, 200, 4), bootstrap_ci<LabDeltaRow>(mean_delta, sim, 200, 4));
  EXPECT_NE(bootstrap_ci<LabDeltaRow>(mean_delta, sim, 200, 4), bootstrap_ci<LabDeltaRow>(mean_delta, sim, 200, 5));
  EXPECT_THROW(bootstrap_ci<LabDeltaRow>(mean_delta, sim, 99, 4), Error);
}

TEST(Bootstrap, TooManyFailuresIsDegenerate) {
  // Naive needs both arms; with 2 treated rows of 60 most resamples lack a treated row.
  auto rows = arms({1, 2}, std::vector<double>(58, 0.0));
  auto est = [](const std::vector<LabDeltaRow>& s) { return naive(s).estimate; };
  try {
    bootstrap_ci<LabDeltaRow>(est, rows, 200, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::degenerate_resample);
  }
}

TEST(Bootstrap, PercentileCoverageNearNominal) {
  int covered = 0;
  const int reps = 200;
  for (int k = 0; k < reps; ++k) {
    const auto rows = simulated(120, 1000 + k, 1.0, 0.0);
    auto est = [](const std::vector<LabDeltaRow>& s) { return naive(s).estimate; };
    const auto [lo, hi] = bootstrap_ci<LabDeltaRow>(est, rows, 200, k);
    covered += lo <= 1.0 && 1.0 <= hi;
  }
  EXPECT_NEAR(covered / static_cast<double>(reps), 0.95, 0.05);
}

using testing::bh_bruteforce;

TEST(Bh, Examples) {
  EXPECT_EQ(bh_adjust(std::vector<double>{0.01, 0.02, 0.03}), (std::vector<double>{0.03, 0.03, 0.03}));
  EXPECT_EQ(bh_adjust(std::vector<double>{0.2}), (std::vector<double>{0.2}));
  EXPECT_EQ(bh_adjust(std::vector<double>{1, 1, 1}), (std::vector<double>{1, 1, 1}));
  EXPECT_TRUE(bh_adjust(std::vector<double>{}).empty());
  try {
    bh_adjust(std::vector<double>{0.5, 1.2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_p);
  }
  EXPECT_THROW(bh_adjust(std::vector<double>{std::nan("")}), Error);
}

TEST(Bh, MatchesBruteForceAndIsMonotone) {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> p(1 + rng() % 200);
    for (auto& v : p) v = bernoulli(rng, 0.2) ? std::round(uniform01(rng) * 10) / 10 : uniform01(rng) * uniform01(rng);
    const auto adj = bh_adjust(p);
    const auto ref = bh_bruteforce(p);
    for (std::size_t i = 0; i < p.size(); ++i) {
      EXPECT_NEAR(adj[i], ref[i], 1e-12);
      EXPECT_GE(adj[i], p[i]);
      EXPECT_LE(adj[i], 1.0);
      for (std::size_t j = 0; j < p.size(); ++j)
        if (p[i] < p[j]) EXPECT_LE(adj[i], adj[j]);
    }
  }
}

TEST(Estimators, PermutationInvariant) {
  auto rows = simulated(300, 14, 1.0, 1.0);
  auto shuffled = rows;
  std::shuffle(shuffled.begin(), shuffled.end(), Rng(2));
  const auto a = point_estimates(rows, kMethods);
  const auto b = point_estimates(shuffled, kMethods);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-9 * std::max(1.0, std::abs(a[k]))) << k;
}

TEST(Estimators, AgreeOnRandomizedData) {
  const auto rows = simulated(3000, 15, 1.0, 0.0);
  const auto est = estimate_all(rows, kMethods, {200, 7, 0.95});
  for (const auto& c : est) {
    EXPECT_LE(c.ci_low, c.estimate);
    EXPECT_GE(c.ci_high, c.estimate);
    EXPECT_GE(c.p_value, 0.0);
    EXPECT_LE(c.p_value, 1.0);
  }
  for (const auto& a : est)
    for (const auto& b : est) {
      const double half = std::max(a.ci_high - a.ci_low, b.ci_high - b.ci_low) / 2;
      EXPECT_LE(std::abs(a.estimate - b.estimate), 2 * half) << method_name(a.method) << " vs " << method_name(b.method);
    }
}

struct Synthetic {
  GenOutput out;
  CohortBuild cohort;
};

Synthetic synthetic(GenConfig c) {
  Synthetic s;
  c.truth_draws = 1000;
  s.out = generate(c);
  const auto oc = outcome_codes();
  s.cohort = build_cohort(s.out.events, s.out.labs, kWin, {oc.begin(), oc.end()});
  return s;
}

const CausalEstimate& find(const MedicationValidation& v, Marker m, Method k) {
  for (const auto& r : v.rows)
    if (r.marker == m && r.est.method == k) return r.est;
  throw std::runtime_error("missing row");
}

TEST(Validation, SyntheticVerdicts) {
  GenConfig c;
  c.n_patients = 20000;
  const Synthetic s = synthetic(c);
  ValidationOptions opt;
  opt.inference.bootstrap = 100;

  const auto furo = validate_medication(s.out.labs, s.cohort.rows, kWin, s.out.catalog, "furosemide", opt);
  EXPECT_EQ(furo.verdict, Verdict::consistent_worsening);
  EXPECT_EQ(furo.rows.size(), 18u);
  EXPECT_LT(find(furo, Marker::egfr, Method::aipw).estimate, 0);
  EXPECT_GT(find(furo, Marker::bun, Method::aipw).estimate, 0);

  // Renoprotective planted shifts: positive eGFR change, negative creatinine change.
  const auto lis = validate_medication(s.out.labs, s.cohort.rows, kWin, s.out.catalog, "lisinopril", opt);
  EXPECT_GT(find(lis, Marker::egfr, Method::aipw).estimate, 0);
  EXPECT_LT(find(lis, Marker::creatinine, Method::aipw).estimate, 0);
  EXPECT_EQ(marker_direction(Marker::egfr, find(lis, Marker::egfr, Method::aipw)), 1);

  const auto rare = validate_medication(s.out.labs, s.cohort.rows, kWin, s.out.catalog, "gentamicin", opt);
  EXPECT_EQ(rare.verdict, Verdict::insufficient);

  const auto null = validate_medication(s.out.labs, s.cohort.rows, kWin, s.out.catalog, "agent01", opt);
  EXPECT_NE(null.verdict, Verdict::consistent_protective);
  EXPECT_NE(null.verdict, Verdict::consistent_worsening);
  const auto& aipw_egfr = find(null, Marker::egfr, Method::aipw);
  EXPECT_LE(aipw_egfr.ci_low, 0.0);
  EXPECT_GE(aipw_egfr.ci_high, 0.0);

  EXPECT_THROW(validate_medication(s.out.labs, s.cohort.rows, kWin, s.out.catalog, "nope", opt), Error);

  const std::string csv = validation_csv({furo, rare});
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "ingredient,marker,method,estimate,ci_low,ci_high,p,p_bh,n_treated,n_control,overlap_flags,verdict");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 18 + 18);
  EXPECT_NE(csv.find("furosemide,eGFR,aipw,"), std::string::npos);
  EXPECT_NE(csv.find(",consistent-worsening\n"), std::string::npos);
  EXPECT_NE(csv.find("gentamicin,BUN,tmle,,,,,,"), std::string::npos);
}

TEST(Validation, BhAppliesPerMethod) {
  std::vector<ValidationRow> rows;
  for (Marker m : kMarkers)
    for (Method k : {Method::naive, Method::aipw}) {
      ValidationRow r{"x", m, {}};
      r.est.method = k;
      r.est.p_value = k == Method::naive ? 0.01 * (1 + static_cast<int>(m)) : 0.5;
      rows.push_back(r);
    }
  bh_by_method(rows);
  for (const auto& r : rows) EXPECT_DOUBLE_EQ(r.est.p_adjusted, r.est.method == Method::naive ? 0.03 : 0.5);
}

}  // namespace
}  // namespace akirisk
