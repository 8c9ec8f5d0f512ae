#pragma once

// Summary tables: cohort characteristics, discrimination/calibration metrics by model and
// observation window, and ingredient-level effects with their lab-marker consistency.

#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "akirisk/cfx.hpp"
#include "akirisk/cohort.hpp"
#include "akirisk/csv.hpp"
#include "akirisk/metrics.hpp"

namespace akirisk {

struct CohortSummary {
  std::size_t n_patients = 0;
  double prevalence = 0;
  std::optional<double> age_mean, age_sd;
  int observation_days = 0, prediction_days = 0;
  std::array<double, 3> lab_available{};  // share of patients with a window lab, by Marker
};

inline CohortSummary summarize_cohort(const std::vector<CohortRow>& rows, const WindowSpec& w,
                                      const std::vector<PatientRecord>& patients = {}) {
  if (rows.empty()) fail(Errc::empty_cohort, "cannot summarize an empty cohort");
  CohortSummary s;
  s.n_patients = rows.size();
  s.observation_days = w.observation_days;
  s.prediction_days = w.prediction_days;
  double pos = 0;
  std::array<double, 3> avail{};
  for (const auto& r : rows) {
    pos += r.label;
    for (std::size_t m = 0; m < 3; ++m) avail[m] += r.labs[m].present;
  }
  const double n = static_cast<double>(rows.size());
  s.prevalence = pos / n;
  for (std::size_t m = 0; m < 3; ++m) s.lab_available[m] = avail[m] / n;
  if (!patients.empty()) {
    std::map<std::string, double> age;
    for (const auto& p : patients) age[p.patient_id] = p.age;
    double sum = 0, sq = 0, k = 0;
    for (const auto& r : rows) {
      auto it = age.find(r.patient_id);
      if (it == age.end()) continue;
      sum += it->second;
      sq += it->second * it->second;
      ++k;
    }
    if (k > 1) {
      s.age_mean = sum / k;
      s.age_sd = std::sqrt(std::max(0.0, (sq - sum * sum / k) / (k - 1)));
    }
  }
  return s;
}

inline nlohmann::json to_json(const CohortSummary& s) {
  nlohmann::json j{{"n_patients", s.n_patients},
                   {"prevalence", s.prevalence},
                   {"observation_days", s.observation_days},
                   {"prediction_days", s.prediction_days},
                   {"lab_available", {{"eGFR", s.lab_available[0]}, {"creatinine", s.lab_available[1]}, {"BUN", s.lab_available[2]}}}};
  j["age_mean"] = s.age_mean ? nlohmann::json(*s.age_mean) : nlohmann::json(nullptr);
  j["age_sd"] = s.age_sd ? nlohmann::json(*s.age_sd) : nlohmann::json(nullptr);
  return j;
}

inline CohortSummary cohort_summary_from_json(const nlohmann::json& j) {
  try {
    CohortSummary s;
    s.n_patients = j.at("n_patients").get<std::size_t>();
    s.prevalence = j.at("prevalence").get<double>();
    s.observation_days = j.at("observation_days").get<int>();
    s.prediction_days = j.at("prediction_days").get<int>();
    const auto& a = j.at("lab_available");
    s.lab_available = {a.at("eGFR").get<double>(), a.at("creatinine").get<double>(), a.at("BUN").get<double>()};
    if (!j.at("age_mean").is_null()) s.age_mean = j["age_mean"].get<double>();
    if (!j.at("age_sd").is_null()) s.age_sd = j["age_sd"].get<double>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::schema_error, std::string("cohort summary: ") + e.what());
  }
}

namespace detail {

inline std::string percent(double share) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * share);
  return buf;
}

inline std::string fixed(double v, int decimals) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

}  // namespace detail

using TableRows = std::vector<std::vector<std::string>>;

inline std::string table_csv(const std::vector<std::string>& header, const TableRows& rows, const std::string& meta = "") {
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s + "\n";
  };
  std::string out = meta + join(header);
  for (const auto& r : rows) out += join(r);
  return out;
}

inline const std::vector<std::string> kTable1Header{"Characteristic", "Value"};

inline TableRows table1_rows(const CohortSummary& s) {
  std::string age = "-";
  if (s.age_mean && s.age_sd) age = detail::fixed(*s.age_mean, 1) + " (" + detail::fixed(*s.age_sd, 1) + ")";
  return {{"N patients", std::to_string(s.n_patients)},
          {"Dialysis or ESRD outcome prevalence", detail::percent(s.prevalence)},
          {"Age mean (SD)", age},
          {"Observation window", std::to_string(s.observation_days) + " days"},
          {"Prediction window", std::to_string(s.prediction_days) + " days"},
          {"Creatinine available", detail::percent(s.lab_available[1])},
          {"BUN available", detail::percent(s.lab_available[2])},
          {"eGFR available", detail::percent(s.lab_available[0])}};
}

/// Metrics of one model on one observation window.
struct MetricsEntry {
  std::string model;  // "transformer" or "logistic_regression"
  int observation_days = 0;
  MetricsReport report;
};

inline const std::vector<std::string> kTable2Metrics{"AUC",      "PR-AUC",   "Precision",  "Recall",
                                                     "F1 Score", "Decision Threshold", "Brier Score"};

inline std::string display_model(const std::string& m) {
  if (m == "transformer") return "Transformer";
  if (m == "logistic_regression") return "Logistic Regression";
  return m;
}

/// Columns are model x window for the windows in `windows` (90 and 365 by default); a
/// missing combination prints "-".
inline std::pair<std::vector<std::string>, TableRows> table2(const std::vector<MetricsEntry>& entries,
                                                             std::vector<int> windows = {90, 365}) {
  std::set<int> ws(windows.begin(), windows.end());
  for (const auto& e : entries) ws.insert(e.observation_days);
  const std::vector<std::string> models{"transformer", "logistic_regression"};
  std::vector<std::string> header{"Metric"};
  for (const auto& m : models)
    for (int w : ws) header.push_back(display_model(m) + " " + std::to_string(w) + " days observation");
  TableRows rows;
  for (const auto& metric : kTable2Metrics) {
    std::vector<std::string> row{metric};
    for (const auto& m : models)
      for (int w : ws) {
        const MetricsEntry* hit = nullptr;
        for (const auto& e : entries)
          if (e.model == m && e.observation_days == w) hit = &e;
        if (!hit) {
          row.push_back("-");
          continue;
        }
        const auto& r = hit->report;
        double v = 0;
        if (metric == "AUC") v = r.auc;
        else if (metric == "PR-AUC") v = r.pr_auc;
        else if (metric == "Precision") v = r.precision;
        else if (metric == "Recall") v = r.recall;
        else if (metric == "F1 Score") v = r.f1;
        else if (metric == "Decision Threshold") v = r.threshold;
        else v = r.brier;
        row.push_back(std::isfinite(v) ? detail::fixed(v, 3) : "inf");
      }
    rows.push_back(std::move(row));
  }
  return {header, rows};
}

inline const std::vector<std::string> kTable4Header{"Drug/Ingredient", "ATE", "Direction", "Support", "Consistency"};

inline std::string display_direction(const std::string& d) {
  if (d == "protective") return "Protective";
  if (d == "risk-increasing") return "Risk increasing";
  if (d == "null") return "Null";
  return d;
}

/// One row per effect-table row, in input order. Consistency is the lab-marker verdict
/// of the same ingredient name, or "not assessed".
inline TableRows table4_rows(const CsvTable& effects, const std::optional<CsvTable>& validation) {
  std::map<std::string, std::string> verdict;
  if (validation) {
    const auto ci = validation->column("ingredient"), cv = validation->column("verdict");
    for (const auto& r : validation->rows) verdict[r[ci]] = r[cv];
  }
  const auto ci = effects.column("ingredient"), ca = effects.column("ate"), cd = effects.column("direction"),
             cs = effects.column("support");
  TableRows rows;
  for (const auto& r : effects.rows) {
    const double ate = parse_double(r[ca], "effect table ate");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%+.4f", ate);
    auto it = verdict.find(r[ci]);
    rows.push_back({r[ci], buf, display_direction(r[cd]), r[cs], it == verdict.end() ? "not assessed" : it->second});
  }
  return rows;
}

inline nlohmann::json table_json(const std::vector<std::string>& header, const TableRows& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json o = nlohmann::json::object();
    for (std::size_t i = 0; i < header.size() && i < r.size(); ++i) o[header[i]] = r[i];
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace akirisk
