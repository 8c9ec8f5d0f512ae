#pragma once

// Synthetic longitudinal EHR tables with planted effects.
//
// Each patient has a latent severity s ~ N(0,1). Severity drives the diagnosis count,
// kidney-marker levels and trajectories, and the outcome. Treatment assignment depends
// on severity only through the observed diagnosis count, so adjusting for that count
// identifies every effect. A second latent "worsening" flag raises outcome risk and is
// visible only through when a set of diagnosis codes occurs (late in the observation
// window), not whether it occurs.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <random>
#include <tuple>
#include <string>
#include <vector>

#include <json.hpp>

#include "akirisk/catalog.hpp"
#include "akirisk/error.hpp"
#include "akirisk/records.hpp"
#include "akirisk/rng.hpp"

namespace akirisk {

struct IngredientSpec {
  std::string name;
  std::string category;
  int n_codes = 1;
  double base_rate = 0.05;  // treatment probability at average diagnosis burden
  double indication = 0.0;  // loading of the diagnosis-burden score in the treatment model
};

struct PlantedEffect {
  double outcome_log_odds = 0.0;
  std::array<double, 3> lab_shift{};  // additive change in follow-up minus baseline, by Marker
};

struct Interaction {
  std::string a, b;
  double log_odds = 0.0;
};

/// Marker trajectories: baseline = level + severity_level * s + noise, and
/// follow-up - baseline = drift + severity_drift * s + planted shifts + noise.
struct LabModel {
  std::array<double, 3> level{85.0, 1.0, 15.0};
  std::array<double, 3> severity_level{-12.0, 0.25, 4.0};
  std::array<double, 3> level_noise{8.0, 0.12, 3.0};
  std::array<double, 3> floor{5.0, 0.3, 3.0};
  std::array<double, 3> drift{-1.0, 0.03, 0.5};
  std::array<double, 3> severity_drift{-2.5, 0.12, 1.2};
  std::array<double, 3> delta_noise{6.0, 0.15, 3.0};
};

inline std::vector<IngredientSpec> default_ingredients() {
  std::vector<IngredientSpec> v{
      {"lisinopril", "ACE/ARB", 2, 0.14, 0.4},
      {"losartan", "ACE/ARB", 2, 0.07, 0.4},
      {"furosemide", "loop diuretic", 2, 0.10, 1.0},
      {"bumetanide", "loop diuretic", 1, 0.03, 1.0},
      {"ibuprofen", "NSAID", 2, 0.10, -0.2},
      {"metformin", "biguanide", 2, 0.12, 0.2},
      {"atorvastatin", "statin", 2, 0.20, 0.2},
      {"amlodipine", "calcium channel blocker", 2, 0.12, 0.3},
      {"gentamicin", "aminoglycoside", 1, 0.0004, 0.5},
  };
  for (int i = 1; i <= 8; ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "agent%02d", i);
    v.push_back({name, "other", 1, 0.05, 0.0});
  }
  return v;
}

inline std::map<std::string, PlantedEffect> default_effects() {
  return {
      {"furosemide", {0.7, {-5.0, 0.4, 5.0}}},
      {"lisinopril", {-0.5, {3.0, -0.2, -2.0}}},
  };
}

struct GenConfig {
  std::size_t n_patients = 20000;
  std::uint64_t seed = 1;
  std::size_t n_dx_codes = 150;
  std::size_t n_proc_codes = 50;
  std::size_t n_renal_codes = 10;
  std::vector<IngredientSpec> ingredients = default_ingredients();
  double prevalence = 0.011;
  std::map<std::string, PlantedEffect> effects = default_effects();
  std::vector<Interaction> interactions{{"ibuprofen", "furosemide", 0.8}};
  double confounding = 1.0;        // multiplies every ingredient's indication loading
  double severity_outcome = 1.0;   // outcome log-odds per unit severity
  double egfr_outcome = 0.3;       // outcome log-odds per SD of lower true eGFR
  double worsening_rate = 0.2;
  double worsening_outcome = 2.0;  // outcome log-odds of the worsening flag
  double mean_dx = 6.0;
  std::array<double, 3> lab_rates{0.935, 0.041, 0.394};  // by Marker
  double followup_lab_rate = 0.85;
  LabModel lab;
  int obs_days = 90;
  int pred_days = 730;
  int calendar_days = 1825;  // spread of index dates
  double leakage_rate = 0.003;
  double short_followup_rate = 0.02;
  std::size_t truth_draws = 1'000'000;
};

/// Planted effects and interactions removed; confounding kept and strengthened, but not
/// so far that propensities pile up at the clipping bounds.
inline GenConfig confounded_null_config(std::size_t n, std::uint64_t seed) {
  GenConfig c;
  c.n_patients = n;
  c.seed = seed;
  c.effects.clear();
  c.interactions.clear();
  c.confounding = 1.5;
  return c;
}

/// No planted effects and treatment independent of everything else.
inline GenConfig null_config(std::size_t n, std::uint64_t seed) {
  GenConfig c = confounded_null_config(n, seed);
  c.confounding = 0.0;
  return c;
}

inline std::vector<std::string> outcome_codes() { return {"DX_ESRD", "PROC_DIALYSIS"}; }

inline std::vector<CatalogEntry> catalog_entries(const GenConfig& c) {
  std::vector<CatalogEntry> out;
  for (const auto& ing : c.ingredients) {
    std::string upper;
    for (char ch : ing.name) upper += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    for (int k = 1; k <= ing.n_codes; ++k) out.push_back({ing.name, ing.category, "RX_" + upper + "_" + std::to_string(k)});
  }
  return out;
}

inline void validate(const GenConfig& c) {
  auto bad = [](const std::string& m) { fail(Errc::invalid_config, m); };
  if (c.n_patients == 0) bad("n_patients must be positive");
  if (!(c.prevalence > 0.0 && c.prevalence < 1.0)) bad("prevalence must lie in (0,1)");
  if (c.obs_days <= 0 || c.pred_days <= 0) bad("window lengths must be positive");
  if (c.obs_days < 31) bad("obs_days must be at least 31");
  if (c.n_dx_codes == 0 || c.n_proc_codes == 0) bad("code vocabulary sizes must be positive");
  if (c.n_renal_codes > c.n_dx_codes) bad("n_renal_codes exceeds n_dx_codes");
  if (c.ingredients.empty()) bad("medication catalog is empty");
  if (c.calendar_days <= 0) bad("calendar_days must be positive");
  auto known = [&](const std::string& n) {
    for (const auto& i : c.ingredients)
      if (i.name == n) return true;
    return false;
  };
  for (const auto& i : c.ingredients) {
    if (i.n_codes < 1) bad("ingredient '" + i.name + "' needs at least one code");
    if (!(i.base_rate > 0.0 && i.base_rate < 1.0)) bad("ingredient base_rate must lie in (0,1)");
  }
  for (const auto& [name, _] : c.effects)
    if (!known(name)) bad("planted effect on '" + name + "' which is not in the catalog");
  for (const auto& it : c.interactions)
    if (!known(it.a) || !known(it.b)) bad("interaction references an ingredient not in the catalog");
  for (double r : c.lab_rates)
    if (!(r >= 0.0 && r <= 1.0)) bad("lab rates must lie in [0,1]");
  if (!(c.followup_lab_rate >= 0.0 && c.followup_lab_rate <= 1.0)) bad("followup_lab_rate must lie in [0,1]");
  for (double r : {c.worsening_rate, c.leakage_rate, c.short_followup_rate})
    if (!(r >= 0.0 && r < 1.0)) bad("rates must lie in [0,1)");
  if (c.truth_draws == 0) bad("truth_draws must be positive");
}

namespace detail {

inline double logit(double p) { return std::log(p / (1.0 - p)); }
inline double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

/// Everything about a patient that feeds the outcome and treatment equations.
struct LatentState {
  double severity = 0.0;
  int n_dx = 0;
  double burden = 0.0;   // standardized log diagnosis count
  double egfr_true = 0.0;
  bool worsening = false;
  bool worsening_codes = false;  // worsening codes appear in the window (late if worsening, else early)
  std::vector<std::uint8_t> treated;  // by ingredient index
};

inline double burden_score(int n_dx, double mean_dx) { return (std::log1p(n_dx) - std::log1p(mean_dx)) / 0.45; }

inline LatentState sample_state(Rng& rng, const GenConfig& c) {
  LatentState st;
  std::normal_distribution<double> normal(0.0, 1.0);
  st.severity = normal(rng);
  std::poisson_distribution<int> dx(c.mean_dx * std::exp(0.45 * st.severity));
  st.n_dx = 1 + dx(rng);
  st.egfr_true = c.lab.level[0] + c.lab.severity_level[0] * st.severity + c.lab.level_noise[0] * normal(rng);
  st.worsening = bernoulli(rng, c.worsening_rate);
  st.worsening_codes = st.worsening || bernoulli(rng, 0.5);
  // The score uses every diagnosis event in the window, so it is observable from the data.
  st.burden = burden_score(st.n_dx + 2 * st.worsening_codes, c.mean_dx);
  st.treated.resize(c.ingredients.size());
  for (std::size_t k = 0; k < c.ingredients.size(); ++k) {
    const auto& ing = c.ingredients[k];
    st.treated[k] = bernoulli(rng, sigmoid(logit(ing.base_rate) + c.confounding * ing.indication * st.burden));
  }
  return st;
}

/// Indices into GenConfig::ingredients resolved once.
struct ResolvedEffects {
  std::vector<double> outcome;                // per ingredient
  std::vector<std::array<double, 3>> lab;     // per ingredient
  std::vector<std::tuple<std::size_t, std::size_t, double>> interactions;
  double egfr_sd = 1.0;
};

inline ResolvedEffects resolve(const GenConfig& c) {
  ResolvedEffects r;
  r.outcome.assign(c.ingredients.size(), 0.0);
  r.lab.assign(c.ingredients.size(), {0.0, 0.0, 0.0});
  auto index = [&](const std::string& n) {
    for (std::size_t k = 0; k < c.ingredients.size(); ++k)
      if (c.ingredients[k].name == n) return k;
    fail(Errc::invalid_config, "unknown ingredient '" + n + "'");
  };
  for (const auto& [name, e] : c.effects) {
    r.outcome[index(name)] = e.outcome_log_odds;
    r.lab[index(name)] = e.lab_shift;
  }
  for (const auto& it : c.interactions) r.interactions.emplace_back(index(it.a), index(it.b), it.log_odds);
  r.egfr_sd = std::hypot(c.lab.severity_level[0], c.lab.level_noise[0]);
  if (r.egfr_sd <= 0) r.egfr_sd = 1.0;
  return r;
}

/// Outcome log-odds without the intercept, for a given treatment vector.
inline double outcome_score(const GenConfig& c, const ResolvedEffects& r, const LatentState& st,
                            const std::vector<std::uint8_t>& treated) {
  double eta = c.severity_outcome * st.severity - c.egfr_outcome * (st.egfr_true - c.lab.level[0]) / r.egfr_sd;
  if (st.worsening) eta += c.worsening_outcome;
  for (std::size_t k = 0; k < treated.size(); ++k)
    if (treated[k]) eta += r.outcome[k];
  for (const auto& [a, b, w] : r.interactions)
    if (treated[a] && treated[b]) eta += w;
  return eta;
}

/// Intercept such that the population-average outcome probability equals the target.
inline double calibrate_intercept(const GenConfig& c, const ResolvedEffects& r) {
  const std::size_t draws = 200'000;
  Rng rng = substream(c.seed, "calibrate");
  std::vector<double> scores(draws);
  for (auto& s : scores) {
    LatentState st = sample_state(rng, c);
    s = outcome_score(c, r, st, st.treated);
  }
  double lo = -30.0, hi = 10.0;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    double mean = 0.0;
    for (double s : scores) mean += sigmoid(mid + s);
    mean /= static_cast<double>(draws);
    (mean < c.prevalence ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline std::string patient_id(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "P%07zu", i + 1);
  return buf;
}

}  // namespace detail

enum class PatientKind : std::uint8_t { regular, leakage, short_followup };

/// Per-patient latent values, exposed for tests and diagnostics.
struct PatientLatent {
  double severity = 0.0;
  bool worsening = false;
  bool outcome = false;
  PatientKind kind = PatientKind::regular;
  int index_day = 0;
  std::vector<std::uint8_t> treated;
};

struct GenOutput {
  std::vector<EventRecord> events;
  std::vector<LabRecord> labs;
  std::vector<PatientRecord> patients;
  MedCatalog catalog;
  std::vector<PatientLatent> latent;
  double intercept = 0.0;
};

/// Event days are absolute calendar days; each patient's first event is their index
/// date, so relative offsets start at 0.
inline GenOutput generate(const GenConfig& c) {
  validate(c);
  const auto eff = detail::resolve(c);
  GenOutput out;
  out.catalog = MedCatalog(catalog_entries(c));
  out.intercept = detail::calibrate_intercept(c, eff);

  std::vector<std::vector<std::string>> ingredient_codes(c.ingredients.size());
  for (std::size_t k = 0; k < c.ingredients.size(); ++k) {
    const auto& set = out.catalog.ingredient_codes(c.ingredients[k].name);
    ingredient_codes[k].assign(set.begin(), set.end());
  }
  auto code_name = [](const char* prefix, std::size_t j) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%s%04zu", prefix, j + 1);
    return std::string(buf);
  };
  std::vector<double> dx_weights(c.n_dx_codes - c.n_renal_codes), proc_weights(c.n_proc_codes);
  for (std::size_t j = 0; j < dx_weights.size(); ++j) dx_weights[j] = 1.0 / std::pow(j + 1.0, 0.8);
  for (std::size_t j = 0; j < proc_weights.size(); ++j) proc_weights[j] = 1.0 / std::pow(j + 1.0, 0.8);
  const std::vector<std::string> worsening_codes{"DXW001", "DXW002", "DXW003"};
  const auto outcomes = outcome_codes();

  out.latent.reserve(c.n_patients);
  for (std::size_t i = 0; i < c.n_patients; ++i) {
    Rng rng = substream(c.seed, "patient", i);
    const std::string pid = detail::patient_id(i);
    detail::LatentState st = detail::sample_state(rng, c);
    const double p = detail::sigmoid(out.intercept + detail::outcome_score(c, eff, st, st.treated));
    const bool y = bernoulli(rng, p);

    PatientLatent lat{st.severity, st.worsening, y, PatientKind::regular, 0, st.treated};
    const double u = uniform01(rng);
    if (u < c.leakage_rate) lat.kind = PatientKind::leakage;
    else if (u < c.leakage_rate + c.short_followup_rate) lat.kind = PatientKind::short_followup;
    lat.index_day = std::uniform_int_distribution<int>(0, c.calendar_days - 1)(rng);
    const int base = lat.index_day;
    const int obs = c.obs_days, pred = c.pred_days;

    std::vector<EventRecord> ev;
    auto day_in = [&](int lo, int hi_exclusive) { return std::uniform_int_distribution<int>(lo, hi_exclusive - 1)(rng); };
    auto emit = [&](int rel_day, Domain d, std::string code) { ev.push_back({pid, base + rel_day, d, std::move(code)}); };

    std::discrete_distribution<std::size_t> pick_dx(dx_weights.begin(), dx_weights.end());
    std::discrete_distribution<std::size_t> pick_proc(proc_weights.begin(), proc_weights.end());
    const double renal_share = 0.15 * detail::sigmoid(1.5 * st.severity);
    for (int k = 0; k < st.n_dx; ++k) {
      std::string code = bernoulli(rng, renal_share)
                             ? code_name("DXR", std::uniform_int_distribution<std::size_t>(0, c.n_renal_codes - 1)(rng))
                             : code_name("DX", pick_dx(rng));
      emit(k == 0 ? 0 : day_in(0, obs), Domain::dx, std::move(code));
    }
    std::poisson_distribution<int> n_proc(2.0 * std::exp(0.3 * st.severity));
    for (int k = n_proc(rng); k > 0; --k) emit(day_in(0, obs), Domain::proc, code_name("PR", pick_proc(rng)));
    std::poisson_distribution<int> extra_fills(0.5);
    for (std::size_t k = 0; k < c.ingredients.size(); ++k) {
      if (!st.treated[k]) continue;
      const auto& codes = ingredient_codes[k];
      const std::string& code = codes[std::uniform_int_distribution<std::size_t>(0, codes.size() - 1)(rng)];
      for (int f = 1 + extra_fills(rng); f > 0; --f) emit(day_in(0, obs), Domain::med, code);
    }
    if (st.worsening) {
      for (int k = 0; k < 2; ++k) emit(day_in(obs - 14, obs), Domain::dx, worsening_codes[k + (k == 1 && bernoulli(rng, 0.5))]);
    } else if (st.worsening_codes) {
      for (int k = 0; k < 2; ++k) emit(day_in(0, obs - 30), Domain::dx, worsening_codes[k + (k == 1 && bernoulli(rng, 0.5))]);
    }

    // Follow-up: regular patients are observed past the prediction horizon.
    int last_day = obs + pred + day_in(0, 90);
    if (lat.kind == PatientKind::short_followup) last_day = obs + day_in(0, pred - 60);
    std::poisson_distribution<int> n_later(3.0);
    for (int k = n_later(rng); k > 0; --k) {
      const int d = day_in(obs, last_day + 1);
      if (bernoulli(rng, 0.7)) emit(d, Domain::dx, code_name("DX", pick_dx(rng)));
      else emit(d, Domain::proc, code_name("PR", pick_proc(rng)));
    }
    emit(last_day, Domain::dx, code_name("DX", pick_dx(rng)));
    if (y) {
      const int d = day_in(obs, obs + pred);
      const bool dx = bernoulli(rng, 0.5);
      emit(d, dx ? Domain::dx : Domain::proc, outcomes[dx ? 0 : 1]);
    }
    if (lat.kind == PatientKind::leakage) {
      const bool dx = bernoulli(rng, 0.5);
      emit(day_in(1, obs), dx ? Domain::dx : Domain::proc, outcomes[dx ? 0 : 1]);
    }
    std::sort(ev.begin(), ev.end(), [](const EventRecord& a, const EventRecord& b) {
      return std::tie(a.day_offset, a.domain, a.code) < std::tie(b.day_offset, b.domain, b.code);
    });
    out.events.insert(out.events.end(), std::make_move_iterator(ev.begin()), std::make_move_iterator(ev.end()));

    // Labs: baseline measurements in the observation window, then a follow-up change.
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<LabRecord> labs;
    for (Marker m : kMarkers) {
      const auto mi = static_cast<std::size_t>(m);
      if (!bernoulli(rng, c.lab_rates[mi])) continue;
      const double truth = m == Marker::egfr
                               ? st.egfr_true
                               : c.lab.level[mi] + c.lab.severity_level[mi] * st.severity + c.lab.level_noise[mi] * normal(rng);
      const int n_base = std::uniform_int_distribution<int>(1, 3)(rng);
      std::vector<int> days;
      for (int k = 0; k < n_base; ++k) days.push_back(day_in(0, obs));
      std::sort(days.begin(), days.end());
      double last = 0.0;
      for (int d : days) {
        last = std::max(c.lab.floor[mi], truth + 0.3 * c.lab.level_noise[mi] * normal(rng));
        labs.push_back({pid, base + d, m, last});
      }
      if (!bernoulli(rng, c.followup_lab_rate)) continue;
      double delta = c.lab.drift[mi] + c.lab.severity_drift[mi] * st.severity + c.lab.delta_noise[mi] * normal(rng);
      for (std::size_t k = 0; k < c.ingredients.size(); ++k)
        if (st.treated[k]) delta += eff.lab[k][mi];
      const int d1 = obs + day_in(0, 180);
      labs.push_back({pid, base + d1, m, last + delta});
      if (bernoulli(rng, 0.5))
        labs.push_back({pid, base + d1 + day_in(30, 365), m, last + delta + c.lab.delta_noise[mi] * normal(rng)});
    }
    out.labs.insert(out.labs.end(), labs.begin(), labs.end());

    const double age = std::clamp(51.9 + 16.0 * normal(rng), 18.0, 95.0);
    out.patients.push_back({pid, std::round(age * 10.0) / 10.0});
    out.latent.push_back(std::move(lat));
  }
  return out;
}

struct GroundTruth {
  double intercept = 0.0;
  double prevalence = 0.0;  // Monte-Carlo mean outcome probability
  std::size_t draws = 0;
  std::map<std::string, double> outcome_ate;         // risk difference, ingredient set to 1 vs 0
  std::map<std::string, double> naive_outcome_diff;  // E[p | treated] - E[p | untreated]
  std::map<std::string, double> category_ate;        // all member ingredients set to 1 vs 0
  std::map<std::string, std::array<double, 3>> lab_effect;  // mean change in delta, by Marker
};

/// Monte-Carlo evaluation of the generative equations with common random numbers
/// across the treated and untreated scenario of every draw.
inline GroundTruth ground_truth(const GenConfig& c) {
  validate(c);
  const auto eff = detail::resolve(c);
  GroundTruth g;
  g.intercept = detail::calibrate_intercept(c, eff);
  g.draws = c.truth_draws;
  const std::size_t K = c.ingredients.size();
  std::vector<double> ate(K, 0.0), p_t(K, 0.0), p_c(K, 0.0), n_t(K, 0.0);
  std::vector<std::array<double, 3>> lab(K, {0.0, 0.0, 0.0});
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t k = 0; k < K; ++k) members[c.ingredients[k].category].push_back(k);
  std::map<std::string, double> cat_ate;
  double prev = 0.0;

  Rng rng = substream(c.seed, "ground-truth");
  std::vector<std::uint8_t> t;
  for (std::size_t d = 0; d < c.truth_draws; ++d) {
    detail::LatentState st = detail::sample_state(rng, c);
    const double p = detail::sigmoid(g.intercept + detail::outcome_score(c, eff, st, st.treated));
    prev += p;
    t = st.treated;
    for (std::size_t k = 0; k < K; ++k) {
      t[k] = 1;
      const double p1 = detail::sigmoid(g.intercept + detail::outcome_score(c, eff, st, t));
      t[k] = 0;
      const double p0 = detail::sigmoid(g.intercept + detail::outcome_score(c, eff, st, t));
      t[k] = st.treated[k];
      ate[k] += p1 - p0;
      if (st.treated[k]) {
        p_t[k] += p;
        n_t[k] += 1.0;
      } else {
        p_c[k] += p;
      }
      // Delta under treatment minus delta without it; all other terms cancel.
      for (std::size_t m = 0; m < 3; ++m) lab[k][m] += eff.lab[k][m];
    }
    for (const auto& [cat, idx] : members) {
      for (auto k : idx) t[k] = 1;
      const double p1 = detail::sigmoid(g.intercept + detail::outcome_score(c, eff, st, t));
      for (auto k : idx) t[k] = 0;
      const double p0 = detail::sigmoid(g.intercept + detail::outcome_score(c, eff, st, t));
      for (auto k : idx) t[k] = st.treated[k];
      cat_ate[cat] += p1 - p0;
    }
  }
  const double n = static_cast<double>(c.truth_draws);
  g.prevalence = prev / n;
  for (std::size_t k = 0; k < K; ++k) {
    const auto& name = c.ingredients[k].name;
    g.outcome_ate[name] = ate[k] / n;
    const double nt = n_t[k], nc = n - n_t[k];
    g.naive_outcome_diff[name] = (nt > 0 ? p_t[k] / nt : 0.0) - (nc > 0 ? p_c[k] / nc : 0.0);
    g.lab_effect[name] = {lab[k][0] / n, lab[k][1] / n, lab[k][2] / n};
  }
  for (const auto& [cat, v] : cat_ate) g.category_ate[cat] = v / n;
  return g;
}

inline nlohmann::json to_json(const GroundTruth& g) {
  nlohmann::json lab;
  for (const auto& [name, v] : g.lab_effect) lab[name] = {{"eGFR", v[0]}, {"creatinine", v[1]}, {"BUN", v[2]}};
  return {{"intercept", g.intercept},
          {"prevalence", g.prevalence},
          {"draws", g.draws},
          {"outcome_ate", g.outcome_ate},
          {"naive_outcome_diff", g.naive_outcome_diff},
          {"category_ate", g.category_ate},
          {"lab_effect", lab}};
}

inline nlohmann::json to_json(const GenConfig& c) {
  nlohmann::json ings = nlohmann::json::array();
  for (const auto& i : c.ingredients)
    ings.push_back({{"name", i.name}, {"category", i.category}, {"n_codes", i.n_codes}, {"base_rate", i.base_rate},
                    {"indication", i.indication}});
  nlohmann::json effects = nlohmann::json::object();
  for (const auto& [name, e] : c.effects) effects[name] = {{"outcome_log_odds", e.outcome_log_odds}, {"lab_shift", e.lab_shift}};
  nlohmann::json inter = nlohmann::json::array();
  for (const auto& i : c.interactions) inter.push_back({{"a", i.a}, {"b", i.b}, {"log_odds", i.log_odds}});
  return {{"n_patients", c.n_patients},
          {"seed", c.seed},
          {"n_dx_codes", c.n_dx_codes},
          {"n_proc_codes", c.n_proc_codes},
          {"n_renal_codes", c.n_renal_codes},
          {"ingredients", ings},
          {"prevalence", c.prevalence},
          {"effects", effects},
          {"interactions", inter},
          {"confounding", c.confounding},
          {"severity_outcome", c.severity_outcome},
          {"egfr_outcome", c.egfr_outcome},
          {"worsening_rate", c.worsening_rate},
          {"worsening_outcome", c.worsening_outcome},
          {"mean_dx", c.mean_dx},
          {"lab_rates", c.lab_rates},
          {"followup_lab_rate", c.followup_lab_rate},
          {"lab",
           {{"level", c.lab.level},
            {"severity_level", c.lab.severity_level},
            {"level_noise", c.lab.level_noise},
            {"floor", c.lab.floor},
            {"drift", c.lab.drift},
            {"severity_drift", c.lab.severity_drift},
            {"delta_noise", c.lab.delta_noise}}},
          {"obs_days", c.obs_days},
          {"pred_days", c.pred_days},
          {"calendar_days", c.calendar_days},
          {"leakage_rate", c.leakage_rate},
          {"short_followup_rate", c.short_followup_rate},
          {"truth_draws", c.truth_draws}};
}

/// Reads the keys present in `j` over `c`. List- and map-valued keys replace the whole
/// value; "lab" merges per array.
inline GenConfig gen_config_from_json(const nlohmann::json& j, GenConfig c = {}) {
  using A3 = std::array<double, 3>;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "n_patients") c.n_patients = v.get<std::size_t>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "n_dx_codes") c.n_dx_codes = v.get<std::size_t>();
      else if (k == "n_proc_codes") c.n_proc_codes = v.get<std::size_t>();
      else if (k == "n_renal_codes") c.n_renal_codes = v.get<std::size_t>();
      else if (k == "ingredients") {
        c.ingredients.clear();
        for (const auto& i : v)
          c.ingredients.push_back({i.at("name").get<std::string>(), i.at("category").get<std::string>(),
                                   i.value("n_codes", 1), i.value("base_rate", 0.05), i.value("indication", 0.0)});
      } else if (k == "prevalence") c.prevalence = v.get<double>();
      else if (k == "effects") {
        c.effects.clear();
        for (const auto& [name, e] : v.items())
          c.effects[name] = {e.value("outcome_log_odds", 0.0), e.value("lab_shift", A3{0.0, 0.0, 0.0})};
      } else if (k == "interactions") {
        c.interactions.clear();
        for (const auto& i : v)
          c.interactions.push_back({i.at("a").get<std::string>(), i.at("b").get<std::string>(), i.at("log_odds").get<double>()});
      } else if (k == "confounding") c.confounding = v.get<double>();
      else if (k == "severity_outcome") c.severity_outcome = v.get<double>();
      else if (k == "egfr_outcome") c.egfr_outcome = v.get<double>();
      else if (k == "worsening_rate") c.worsening_rate = v.get<double>();
      else if (k == "worsening_outcome") c.worsening_outcome = v.get<double>();
      else if (k == "mean_dx") c.mean_dx = v.get<double>();
      else if (k == "lab_rates") c.lab_rates = v.get<A3>();
      else if (k == "followup_lab_rate") c.followup_lab_rate = v.get<double>();
      else if (k == "lab") {
        for (const auto& [lk, lv] : v.items()) {
          if (lk == "level") c.lab.level = lv.get<A3>();
          else if (lk == "severity_level") c.lab.severity_level = lv.get<A3>();
          else if (lk == "level_noise") c.lab.level_noise = lv.get<A3>();
          else if (lk == "floor") c.lab.floor = lv.get<A3>();
          else if (lk == "drift") c.lab.drift = lv.get<A3>();
          else if (lk == "severity_drift") c.lab.severity_drift = lv.get<A3>();
          else if (lk == "delta_noise") c.lab.delta_noise = lv.get<A3>();
          else fail(Errc::schema_error, "unknown lab model key '" + lk + "'");
        }
      } else if (k == "obs_days") c.obs_days = v.get<int>();
      else if (k == "pred_days") c.pred_days = v.get<int>();
      else if (k == "calendar_days") c.calendar_days = v.get<int>();
      else if (k == "leakage_rate") c.leakage_rate = v.get<double>();
      else if (k == "short_followup_rate") c.short_followup_rate = v.get<double>();
      else if (k == "truth_draws") c.truth_draws = v.get<std::size_t>();
      else fail(Errc::schema_error, "unknown generator config key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::schema_error, std::string("generator config: ") + e.what());
  }
  return c;
}

}  // namespace akirisk
