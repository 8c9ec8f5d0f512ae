#pragma once

// Fixed-window cohort construction: per-patient labeling with leakage exclusion,
// observation-window token sequences, lab trend features, utilization counts and a
// chronological split.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "akirisk/error.hpp"
#include "akirisk/records.hpp"

namespace akirisk {

struct WindowSpec {
  int observation_days = 90;
  int prediction_days = 730;

  void validate() const {
    if (observation_days <= 0 || prediction_days <= 0) fail(Errc::invalid_config, "window lengths must be positive");
  }
};

/// Thresholds for the follow-up and encounter requirements.
struct Eligibility {
  int min_observation_events = 1;
  bool require_full_followup = true;  // last event day >= obs + pred - 1 unless an outcome occurred
};

struct Token {
  int day = 0;
  Domain domain = Domain::dx;
  std::string code;

  friend bool operator==(const Token&, const Token&) = default;
  friend auto operator<=>(const Token& a, const Token& b) {
    return std::tie(a.day, a.domain, a.code) <=> std::tie(b.day, b.domain, b.code);
  }
};

struct MarkerFeatures {
  double last = 0.0;
  double mean = 0.0;
  double slope = 0.0;  // per day
  bool present = false;

  friend bool operator==(const MarkerFeatures&, const MarkerFeatures&) = default;
};

inline constexpr std::size_t kFeatureDim = 12;

struct CohortRow {
  std::string patient_id;
  int index_day = 0;  // calendar day of the first event; offsets below are relative to it
  int label = 0;
  std::vector<Token> tokens;
  std::array<MarkerFeatures, 3> labs{};
  int n_dx = 0, n_proc = 0, n_med = 0;
  std::vector<std::string> exposures;  // sorted distinct MED codes in the window

  /// last/mean/slope per marker followed by log1p counts. Missing markers give zeros.
  std::array<double, kFeatureDim> features() const {
    std::array<double, kFeatureDim> f{};
    for (std::size_t m = 0; m < 3; ++m) {
      f[3 * m] = labs[m].last;
      f[3 * m + 1] = labs[m].mean;
      f[3 * m + 2] = labs[m].slope;
    }
    f[9] = std::log1p(n_dx);
    f[10] = std::log1p(n_proc);
    f[11] = std::log1p(n_med);
    return f;
  }

  bool exposed_to(const std::set<std::string>& codes) const {
    return std::any_of(exposures.begin(), exposures.end(), [&](const std::string& c) { return codes.count(c) > 0; });
  }

  friend bool operator==(const CohortRow&, const CohortRow&) = default;
};

enum class LabelStatus { include, exclude_leakage, exclude_insufficient };

struct LabelResult {
  LabelStatus status = LabelStatus::exclude_insufficient;
  int label = 0;

  static LabelResult include(int y) { return {LabelStatus::include, y}; }
  friend bool operator==(const LabelResult&, const LabelResult&) = default;
};

/// events belong to one patient, with day offsets relative to the index date.
inline LabelResult label_patient(const std::vector<EventRecord>& events, const std::set<std::string>& outcome_codes,
                                 const WindowSpec& w, const Eligibility& rule = {}) {
  const int obs = w.observation_days, horizon = w.observation_days + w.prediction_days;
  bool leak = false, positive = false;
  int obs_events = 0, last_day = -1;
  for (const auto& e : events) {
    const bool is_outcome = outcome_codes.count(e.code) > 0;
    if (is_outcome && e.day_offset < obs) leak = true;
    if (is_outcome && e.day_offset >= obs && e.day_offset < horizon) positive = true;
    if (!is_outcome && e.day_offset >= 0 && e.day_offset < obs) ++obs_events;
    last_day = std::max(last_day, e.day_offset);
  }
  if (leak) return {LabelStatus::exclude_leakage, 0};
  if (obs_events < rule.min_observation_events) return {LabelStatus::exclude_insufficient, 0};
  if (rule.require_full_followup && !positive && last_day < horizon - 1) return {LabelStatus::exclude_insufficient, 0};
  return LabelResult::include(positive ? 1 : 0);
}

struct LabPoint {
  int day = 0;
  double value = 0.0;
};

/// points restricted to the observation window; any order.
inline MarkerFeatures lab_trend_features(std::vector<LabPoint> points) {
  MarkerFeatures f;
  if (points.empty()) return f;
  std::sort(points.begin(), points.end(), [](const LabPoint& a, const LabPoint& b) {
    return std::tie(a.day, a.value) < std::tie(b.day, b.value);
  });
  const double n = static_cast<double>(points.size());
  double sx = 0, sy = 0;
  for (const auto& p : points) {
    sx += p.day;
    sy += p.value;
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (const auto& p : points) {
    sxx += (p.day - mx) * (p.day - mx);
    sxy += (p.day - mx) * (p.value - my);
  }
  f.present = true;
  f.last = points.back().value;
  f.mean = my;
  f.slope = sxx > 0 ? sxy / sxx : 0.0;
  return f;
}

struct CohortBuild {
  std::vector<CohortRow> rows;
  std::size_t n_patients = 0;
  std::size_t n_leakage = 0;
  std::size_t n_insufficient = 0;
};

namespace detail {

template <class Rec>
std::map<std::string, std::vector<Rec>> group_by_patient(const std::vector<Rec>& recs) {
  std::map<std::string, std::vector<Rec>> out;
  for (const auto& r : recs) out[r.patient_id].push_back(r);
  return out;
}

}  // namespace detail

/// Rows are ordered by patient_id; input row order does not matter.
inline CohortBuild build_cohort(const std::vector<EventRecord>& events, const std::vector<LabRecord>& labs,
                                const WindowSpec& w, const std::set<std::string>& outcome_codes,
                                const Eligibility& rule = {}) {
  w.validate();
  auto ev_by = detail::group_by_patient(events);
  auto lab_by = detail::group_by_patient(labs);
  CohortBuild out;
  out.n_patients = ev_by.size();
  for (auto& [pid, evs] : ev_by) {
    int index_day = evs.front().day_offset;
    for (const auto& e : evs) index_day = std::min(index_day, e.day_offset);
    for (auto& e : evs) e.day_offset -= index_day;
    const LabelResult lr = label_patient(evs, outcome_codes, w, rule);
    if (lr.status == LabelStatus::exclude_leakage) {
      ++out.n_leakage;
      continue;
    }
    if (lr.status == LabelStatus::exclude_insufficient) {
      ++out.n_insufficient;
      continue;
    }
    CohortRow row;
    row.patient_id = pid;
    row.index_day = index_day;
    row.label = lr.label;
    std::set<std::string> exposures;
    for (const auto& e : evs) {
      if (e.day_offset < 0 || e.day_offset >= w.observation_days) continue;
      row.tokens.push_back({e.day_offset, e.domain, e.code});
      switch (e.domain) {
        case Domain::dx: ++row.n_dx; break;
        case Domain::proc: ++row.n_proc; break;
        case Domain::med:
          ++row.n_med;
          exposures.insert(e.code);
          break;
      }
    }
    std::sort(row.tokens.begin(), row.tokens.end());
    row.exposures.assign(exposures.begin(), exposures.end());
    std::array<std::vector<LabPoint>, 3> pts;
    if (auto it = lab_by.find(pid); it != lab_by.end()) {
      for (const auto& l : it->second) {
        const int d = l.day_offset - index_day;
        if (d >= 0 && d < w.observation_days) pts[static_cast<std::size_t>(l.marker)].push_back({d, l.value});
      }
    }
    for (std::size_t m = 0; m < 3; ++m) row.labs[m] = lab_trend_features(std::move(pts[m]));
    out.rows.push_back(std::move(row));
  }
  if (out.rows.empty()) fail(Errc::empty_cohort, "no patient passed the cohort criteria");
  return out;
}

struct Split {
  std::vector<CohortRow> train, validation, test;
};

/// Sizes by largest-remainder rounding; equal remainders go to the later split.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& fractions) {
  double total = 0;
  for (double f : fractions) {
    if (!(f >= 0.0) || !std::isfinite(f)) fail(Errc::invalid_fractions, "split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) fail(Errc::invalid_fractions, "split fractions must sum to 1");
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = fractions[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = exact - static_cast<double>(sizes[i]);
    used += sizes[i];
  }
  std::array<std::size_t, 3> order{2, 1, 0};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b] + 1e-12; });
  for (std::size_t k = 0; used < n; ++k, ++used) ++sizes[order[k % 3]];
  return sizes;
}

/// Contiguous blocks ordered by index date, ties broken by patient_id.
inline Split time_aware_split(std::vector<CohortRow> rows, const std::array<double, 3>& fractions = {0.7, 0.15, 0.15}) {
  const auto sizes = split_sizes(rows.size(), fractions);
  std::sort(rows.begin(), rows.end(), [](const CohortRow& a, const CohortRow& b) {
    return std::tie(a.index_day, a.patient_id) < std::tie(b.index_day, b.patient_id);
  });
  Split s;
  auto it = std::make_move_iterator(rows.begin());
  s.train.assign(it, it + sizes[0]);
  s.validation.assign(it + sizes[0], it + sizes[0] + sizes[1]);
  s.test.assign(it + sizes[0] + sizes[1], std::make_move_iterator(rows.end()));
  return s;
}

inline nlohmann::json row_to_json(const CohortRow& r) {
  nlohmann::json j;
  j["patient_id"] = r.patient_id;
  j["index_day"] = r.index_day;
  j["label"] = r.label;
  auto toks = nlohmann::json::array();
  for (const auto& t : r.tokens) toks.push_back({t.day, domain_name(t.domain), t.code});
  j["tokens"] = std::move(toks);
  nlohmann::json labs;
  for (Marker m : kMarkers) {
    const auto& f = r.labs[static_cast<std::size_t>(m)];
    labs[std::string(marker_name(m))] = {{"last", f.last}, {"mean", f.mean}, {"slope", f.slope}, {"present", f.present}};
  }
  j["labs"] = std::move(labs);
  j["counts"] = {{"n_dx", r.n_dx}, {"n_proc", r.n_proc}, {"n_med", r.n_med}};
  j["exposures"] = r.exposures;
  return j;
}

inline CohortRow row_from_json(const nlohmann::json& j) {
  try {
    CohortRow r;
    r.patient_id = j.at("patient_id").get<std::string>();
    r.index_day = j.at("index_day").get<int>();
    r.label = j.at("label").get<int>();
    for (const auto& t : j.at("tokens")) r.tokens.push_back({t.at(0).get<int>(), parse_domain(t.at(1).get<std::string>()), t.at(2).get<std::string>()});
    for (Marker m : kMarkers) {
      const auto& f = j.at("labs").at(std::string(marker_name(m)));
      r.labs[static_cast<std::size_t>(m)] = {f.at("last").get<double>(), f.at("mean").get<double>(),
                                             f.at("slope").get<double>(), f.at("present").get<bool>()};
    }
    r.n_dx = j.at("counts").at("n_dx").get<int>();
    r.n_proc = j.at("counts").at("n_proc").get<int>();
    r.n_med = j.at("counts").at("n_med").get<int>();
    r.exposures = j.at("exposures").get<std::vector<std::string>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::schema_error, std::string("cohort row: ") + e.what());
  }
}

}  // namespace akirisk
