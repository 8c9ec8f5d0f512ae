#pragma once

// Binary-classification metrics for rare outcomes: ROC AUC, average precision,
// F1-optimal threshold selection, Brier score, calibration bins and confusion counts.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "akirisk/csv.hpp"
#include "akirisk/error.hpp"

namespace akirisk {

namespace detail {

inline void check_lengths(std::span<const double> s, std::span<const int> y) {
  if (s.size() != y.size()) fail(Errc::shape_mismatch, "scores and labels differ in length");
}

inline std::size_t count_positive(std::span<const int> y) {
  return static_cast<std::size_t>(std::count_if(y.begin(), y.end(), [](int v) { return v != 0; }));
}

/// Indices ordered by descending score (stable, so ties keep input order).
inline std::vector<std::size_t> descending(std::span<const double> s) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  return idx;
}

}  // namespace detail

/// Mann-Whitney form with midranks, so tied scores count one half.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_lengths(scores, labels);
  const std::size_t n = scores.size(), n_pos = detail::count_positive(labels), n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) fail(Errc::single_class, "roc_auc needs both classes");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the rank sum keeps midranks integral.
  long double twice_rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    std::size_t pos_in_group = 0;
    while (j < n && scores[idx[j]] == scores[idx[i]]) pos_in_group += labels[idx[j++]] != 0;
    twice_rank_sum += static_cast<long double>(pos_in_group) * static_cast<long double>(i + 1 + j);
    i = j;
  }
  const long double np = static_cast<long double>(n_pos);
  const long double u = twice_rank_sum / 2 - np * (np + 1) / 2;
  return static_cast<double>(u / (np * static_cast<long double>(n_neg)));
}

struct PrPoint {
  double threshold;
  double precision;
  double recall;
};

struct PrCurve {
  double average_precision = 0;
  std::vector<PrPoint> points;  // one per distinct score, descending threshold
};

/// Average precision as the step-wise sum of recall increments times precision,
/// with tied scores forming one operating point.
inline PrCurve pr_metrics(std::span<const double> scores, std::span<const int> labels) {
  detail::check_lengths(scores, labels);
  const std::size_t n_pos = detail::count_positive(labels);
  if (n_pos == 0) fail(Errc::no_positives, "precision-recall needs at least one positive");
  const auto idx = detail::descending(scores);
  PrCurve c;
  std::size_t tp = 0, fp = 0, prev_tp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    const double s = scores[idx[i]];
    while (i < idx.size() && scores[idx[i]] == s) (labels[idx[i++]] ? tp : fp)++;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    c.average_precision += static_cast<double>(tp - prev_tp) / static_cast<double>(n_pos) * precision;
    c.points.push_back({s, precision, recall});
    prev_tp = tp;
  }
  return c;
}

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const noexcept { return tp + fp + tn + fn; }
  double precision() const noexcept { return tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0; }
  double recall() const noexcept { return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0; }
  double f1() const noexcept {
    const std::size_t d = 2 * tp + fp + fn;
    return d ? 2.0 * static_cast<double>(tp) / static_cast<double>(d) : 0.0;
  }
};

/// Positive prediction means score >= threshold.
inline Confusion confusion(std::span<const double> scores, std::span<const int> labels, double threshold) {
  detail::check_lengths(scores, labels);
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i]) (pred ? c.tp : c.fn)++;
    else (pred ? c.fp : c.tn)++;
  }
  return c;
}

/// F1-maximizing threshold over the distinct scores plus +inf, optionally subject to
/// recall >= min_recall. Ties go to the higher threshold.
inline double select_threshold(std::span<const double> scores, std::span<const int> labels,
                               std::optional<double> min_recall = std::nullopt) {
  detail::check_lengths(scores, labels);
  const std::size_t n_pos = detail::count_positive(labels);
  if (n_pos == 0) fail(Errc::no_feasible_threshold, "threshold selection needs at least one positive");
  const auto idx = detail::descending(scores);
  const std::size_t n = scores.size();
  double best_t = std::numeric_limits<double>::infinity();
  double best_f1 = -1.0;
  auto consider = [&](double t, std::size_t tp, std::size_t fp) {
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    if (min_recall && recall < *min_recall) return;
    const std::size_t fn = n_pos - tp;
    const double f1 = tp ? 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn) : 0.0;
    if (f1 > best_f1) best_f1 = f1, best_t = t;
  };
  consider(std::numeric_limits<double>::infinity(), 0, 0);
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < n;) {
    const double s = scores[idx[i]];
    while (i < n && scores[idx[i]] == s) (labels[idx[i++]] ? tp : fp)++;
    consider(s, tp, fp);
  }
  if (best_f1 < 0) fail(Errc::no_feasible_threshold, "no threshold satisfies the recall constraint");
  return best_t;
}

inline double brier(std::span<const double> scores, std::span<const int> labels) {
  detail::check_lengths(scores, labels);
  if (scores.empty()) return 0.0;
  double s = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double d = scores[i] - labels[i];
    s += d * d;
  }
  return s / static_cast<double>(scores.size());
}

struct CalibrationBin {
  double lo, hi;
  double mean_score;  // 0 for empty bins
  double event_rate;
  std::size_t count;
};

/// Equal-width bins on [0,1]; a score of exactly 1.0 falls in the last bin.
inline std::vector<CalibrationBin> calibration_curve(std::span<const double> scores, std::span<const int> labels,
                                                     std::size_t n_bins = 10) {
  detail::check_lengths(scores, labels);
  if (n_bins == 0) fail(Errc::invalid_config, "calibration needs at least one bin");
  std::vector<double> sum_s(n_bins, 0.0), sum_y(n_bins, 0.0);
  std::vector<std::size_t> cnt(n_bins, 0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = std::clamp(scores[i], 0.0, 1.0);
    const std::size_t b = std::min(n_bins - 1, static_cast<std::size_t>(s * static_cast<double>(n_bins)));
    sum_s[b] += scores[i];
    sum_y[b] += labels[i] != 0;
    ++cnt[b];
  }
  std::vector<CalibrationBin> out;
  for (std::size_t b = 0; b < n_bins; ++b) {
    const double w = 1.0 / static_cast<double>(n_bins);
    const double c = static_cast<double>(cnt[b]);
    out.push_back({b * w, (b + 1) * w, cnt[b] ? sum_s[b] / c : 0.0, cnt[b] ? sum_y[b] / c : 0.0, cnt[b]});
  }
  return out;
}

struct MetricsReport {
  double auc = 0, pr_auc = 0, precision = 0, recall = 0, f1 = 0, brier = 0, threshold = 0;
  std::size_t n = 0, n_positive = 0;
  Confusion counts;
  std::vector<CalibrationBin> calibration;
};

/// Metrics on `scores` at a fixed threshold (normally chosen on validation data).
inline MetricsReport evaluate(std::span<const double> scores, std::span<const int> labels, double threshold,
                              std::size_t n_bins = 10) {
  MetricsReport r;
  r.n = scores.size();
  r.n_positive = detail::count_positive(labels);
  r.auc = roc_auc(scores, labels);
  r.pr_auc = pr_metrics(scores, labels).average_precision;
  r.brier = brier(scores, labels);
  r.threshold = threshold;
  r.counts = confusion(scores, labels, threshold);
  r.precision = r.counts.precision();
  r.recall = r.counts.recall();
  r.f1 = r.counts.f1();
  r.calibration = calibration_curve(scores, labels, n_bins);
  return r;
}

/// Threshold chosen on validation scores, metrics reported on test scores.
inline MetricsReport evaluate_split(std::span<const double> val_scores, std::span<const int> val_labels,
                                    std::span<const double> test_scores, std::span<const int> test_labels,
                                    std::optional<double> min_recall = std::nullopt) {
  return evaluate(test_scores, test_labels, select_threshold(val_scores, val_labels, min_recall));
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : r.calibration)
    bins.push_back({{"lo", b.lo}, {"hi", b.hi}, {"mean_score", b.mean_score}, {"event_rate", b.event_rate}, {"count", b.count}});
  // A threshold of +inf (nothing flagged) is not representable in JSON.
  nlohmann::json threshold = std::isfinite(r.threshold) ? nlohmann::json(r.threshold) : nlohmann::json("inf");
  return {{"auc", r.auc},
          {"pr_auc", r.pr_auc},
          {"precision", r.precision},
          {"recall", r.recall},
          {"f1", r.f1},
          {"brier", r.brier},
          {"threshold", threshold},
          {"n", r.n},
          {"n_positive", r.n_positive},
          {"confusion", {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"tn", r.counts.tn}, {"fn", r.counts.fn}}},
          {"calibration", std::move(bins)}};
}

/// Inverse of to_json; calibration bins are restored as written.
inline MetricsReport metrics_from_json(const nlohmann::json& j) {
  try {
    MetricsReport r;
    r.auc = j.at("auc").get<double>();
    r.pr_auc = j.at("pr_auc").get<double>();
    r.precision = j.at("precision").get<double>();
    r.recall = j.at("recall").get<double>();
    r.f1 = j.at("f1").get<double>();
    r.brier = j.at("brier").get<double>();
    const auto& t = j.at("threshold");
    r.threshold = t.is_string() ? std::numeric_limits<double>::infinity() : t.get<double>();
    r.n = j.at("n").get<std::size_t>();
    r.n_positive = j.at("n_positive").get<std::size_t>();
    const auto& c = j.at("confusion");
    r.counts = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(), c.at("tn").get<std::size_t>(),
                c.at("fn").get<std::size_t>()};
    for (const auto& b : j.at("calibration"))
      r.calibration.push_back({b.at("lo").get<double>(), b.at("hi").get<double>(), b.at("mean_score").get<double>(),
                               b.at("event_rate").get<double>(), b.at("count").get<std::size_t>()});
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::schema_error, std::string("metrics report: ") + e.what());
  }
}

inline std::string pr_curve_csv(const PrCurve& c, const std::string& meta = "") {
  std::string out = meta + "threshold,precision,recall\n";
  for (const auto& p : c.points) out += fmt(p.threshold) + "," + fmt(p.precision) + "," + fmt(p.recall) + "\n";
  return out;
}

inline std::string calibration_csv(const std::vector<CalibrationBin>& bins, const std::string& meta = "") {
  std::string out = meta + "bin_lo,bin_hi,mean_score,event_rate,count\n";
  for (const auto& b : bins)
    out += fmt(b.lo) + "," + fmt(b.hi) + "," + fmt(b.mean_score) + "," + fmt(b.event_rate) + "," + std::to_string(b.count) + "\n";
  return out;
}

}  // namespace akirisk
