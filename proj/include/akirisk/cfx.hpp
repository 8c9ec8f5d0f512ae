#pragma once

// Counterfactual exposure editing on encoded sequences and the model-based average
// treatment effect of a medication (ingredient or category) on predicted risk.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "akirisk/catalog.hpp"
#include "akirisk/csv.hpp"
#include "akirisk/model.hpp"

namespace akirisk {

enum class EditMode { remove, insert };

struct ExposureEdit {
  std::vector<int> target_ids;  // vocabulary ids, ascending
  EditMode mode = EditMode::remove;
};

struct EditResult {
  EncodedSequence seq;
  bool dropped_oldest = false;  // insert into a full sequence evicted the oldest token
};

inline ExposureEdit make_edit(const Vocab& vocab, const std::set<std::string>& codes, EditMode mode) {
  return {med_ids(vocab, codes), mode};
}

/// remove: target tokens become PAD (mask 0) in place. insert: when no target token is
/// present, the lowest target id is appended after the last live slot on day
/// obs_days-1; a full sequence first drops its oldest slot.
inline EditResult apply_edit(const EncodedSequence& seq, const ExposureEdit& edit, int obs_days) {
  if (edit.target_ids.empty()) fail(Errc::invalid_config, "exposure edit needs at least one target id");
  auto is_target = [&](std::size_t i) {
    return seq.mask[i] && seq.type_ids[i] == static_cast<int>(Domain::med) &&
           std::binary_search(edit.target_ids.begin(), edit.target_ids.end(), seq.token_ids[i]);
  };
  EditResult r{seq, false};
  EncodedSequence& s = r.seq;
  if (edit.mode == EditMode::remove) {
    for (std::size_t i = 0; i < s.max_len(); ++i) {
      if (!is_target(i)) continue;
      s.token_ids[i] = kPadId;
      s.type_ids[i] = kPadType;
      s.days[i] = 0;
      s.mask[i] = 0;
      --s.length;
    }
    return r;
  }
  for (std::size_t i = 0; i < s.max_len(); ++i)
    if (is_target(i)) return r;
  std::size_t slot = 0;
  for (std::size_t i = 0; i < s.max_len(); ++i)
    if (s.mask[i]) slot = i + 1;
  if (slot == s.max_len()) {
    // Shift everything one slot toward the front, evicting slot 0.
    if (s.mask[0]) --s.length;
    for (std::size_t i = 0; i + 1 < s.max_len(); ++i) {
      s.token_ids[i] = s.token_ids[i + 1];
      s.type_ids[i] = s.type_ids[i + 1];
      s.days[i] = s.days[i + 1];
      s.mask[i] = s.mask[i + 1];
    }
    slot = s.max_len() - 1;
    r.dropped_oldest = true;
  }
  s.token_ids[slot] = edit.target_ids.front();
  s.type_ids[slot] = static_cast<int>(Domain::med);
  s.days[slot] = obs_days - 1;
  s.mask[slot] = 1;
  ++s.length;
  return r;
}

enum class Direction { protective, risk_increasing, null };

inline std::string_view direction_name(Direction d) {
  switch (d) {
    case Direction::protective: return "protective";
    case Direction::risk_increasing: return "risk-increasing";
    case Direction::null: return "null";
  }
  return "?";
}

inline constexpr double kNullBand = 1e-4;

inline Direction direction_of(double ate, double null_band = kNullBand) {
  if (std::abs(ate) < null_band) return Direction::null;
  return ate < 0 ? Direction::protective : Direction::risk_increasing;
}

struct FoldStats {
  std::size_t k = 0;
  double mean = 0, sd = 0, min = 0, max = 0;
  std::vector<double> values;
};

struct AteEstimate {
  std::string ingredient;
  double ate = 0;
  std::size_t support = 0;  // patients exposed to an in-vocabulary target code
  std::size_t n = 0;
  std::size_t dropped_oldest = 0;
  bool editable = true;     // false when no target code is in the vocabulary
  Direction direction = Direction::null;
  std::optional<FoldStats> folds;
};

/// Mean over patients of risk(insert) - risk(remove) from the outcome head. Patients are
/// processed in patient-id order so the result does not depend on input order.
inline AteEstimate ate(const ModelParams& model, const std::vector<CohortRow>& rows, const std::string& ingredient,
                       const MedCatalog& catalog, const Vocab& vocab, double null_band = kNullBand) {
  const std::set<std::string>& codes = catalog.codes_for(ingredient);
  if (rows.empty()) fail(Errc::empty_cohort, "ate over an empty cohort");
  AteEstimate est;
  est.ingredient = ingredient;
  est.n = rows.size();
  const ExposureEdit remove = make_edit(vocab, codes, EditMode::remove);
  if (remove.target_ids.empty()) {
    est.editable = false;
    return est;
  }
  const ExposureEdit insert{remove.target_ids, EditMode::insert};
  std::set<std::string> in_vocab;
  for (const auto& c : codes)
    if (vocab.id(Domain::med, c) != kUnkId) in_vocab.insert(c);

  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rows[a].patient_id < rows[b].patient_id; });

  const ModelConfig& cfg = model.config;
  std::vector<EncodedSequence> treated, untreated;
  std::vector<std::array<double, kFeatureDim>> feats;
  treated.reserve(rows.size());
  untreated.reserve(rows.size());
  for (std::size_t i : order) {
    const EncodedSequence s = encode(rows[i], vocab, cfg.max_len);
    EditResult t = apply_edit(s, insert, cfg.obs_days);
    est.dropped_oldest += t.dropped_oldest;
    treated.push_back(std::move(t.seq));
    untreated.push_back(apply_edit(s, remove, cfg.obs_days).seq);
    feats.push_back(model.scaler.transform(rows[i]));
    est.support += rows[i].exposed_to(in_vocab);
  }
  auto ptrs = [](const std::vector<EncodedSequence>& v) {
    std::vector<const EncodedSequence*> out;
    for (const auto& s : v) out.push_back(&s);
    return out;
  };
  const auto p1 = predict(model, ptrs(treated), feats).y_hat;
  const auto p0 = predict(model, ptrs(untreated), feats).y_hat;
  double sum = 0;
  for (std::size_t i = 0; i < p1.size(); ++i) sum += p1[i] - p0[i];
  est.ate = sum / static_cast<double>(p1.size());
  est.direction = direction_of(est.ate, null_band);
  return est;
}

/// Supplies the model used for fold `k`, given the rows outside that fold.
using ModelFactory = std::function<ModelParams(std::size_t k, const std::vector<CohortRow>& outside)>;

/// Splits the held-out rows into K contiguous folds and reports the per-fold ATE spread
/// (sample sd). The point estimate is the fold-size-weighted mean, which equals the
/// whole-cohort ATE when every fold uses the same model.
inline AteEstimate nested_fold_ate(const ModelFactory& factory, const std::vector<CohortRow>& held_out, std::size_t K,
                                   const std::string& ingredient, const MedCatalog& catalog, const Vocab& vocab,
                                   double null_band = kNullBand) {
  if (K < 2) fail(Errc::invalid_config, "nested folds need K >= 2");
  if (K > held_out.size()) fail(Errc::fold_too_small, "more folds than held-out patients");
  AteEstimate est;
  est.ingredient = ingredient;
  FoldStats fs;
  fs.k = K;
  const std::size_t n = held_out.size();
  double weighted = 0;
  for (std::size_t k = 0; k < K; ++k) {
    const auto lo = static_cast<std::ptrdiff_t>(k * n / K), hi = static_cast<std::ptrdiff_t>((k + 1) * n / K);
    std::vector<CohortRow> inside(held_out.begin() + lo, held_out.begin() + hi);
    std::vector<CohortRow> outside(held_out.begin(), held_out.begin() + lo);
    outside.insert(outside.end(), held_out.begin() + hi, held_out.end());
    const AteEstimate f = ate(factory(k, outside), inside, ingredient, catalog, vocab, null_band);
    fs.values.push_back(f.ate);
    weighted += f.ate * static_cast<double>(f.n);
    est.n += f.n;
    est.support += f.support;
    est.dropped_oldest += f.dropped_oldest;
    est.editable = f.editable;
  }
  est.ate = weighted / static_cast<double>(est.n);
  est.direction = direction_of(est.ate, null_band);
  fs.mean = std::accumulate(fs.values.begin(), fs.values.end(), 0.0) / static_cast<double>(K);
  double ss = 0;
  for (double v : fs.values) ss += (v - fs.mean) * (v - fs.mean);
  fs.sd = std::sqrt(ss / static_cast<double>(K - 1));
  fs.min = *std::min_element(fs.values.begin(), fs.values.end());
  fs.max = *std::max_element(fs.values.begin(), fs.values.end());
  est.folds = std::move(fs);
  return est;
}

/// Convenience overload for a single frozen model.
inline AteEstimate nested_fold_ate(const ModelParams& model, const std::vector<CohortRow>& held_out, std::size_t K,
                                   const std::string& ingredient, const MedCatalog& catalog, const Vocab& vocab,
                                   double null_band = kNullBand) {
  return nested_fold_ate([&](std::size_t, const std::vector<CohortRow>&) { return model; }, held_out, K, ingredient,
                         catalog, vocab, null_band);
}

inline std::string effect_table_csv(const std::vector<AteEstimate>& rows, const std::string& meta = "") {
  std::string out = meta + "ingredient,ate,direction,support,fold_mean,fold_sd,fold_min,fold_max\n";
  for (const auto& e : rows) {
    out += e.ingredient + "," + fmt(e.ate) + "," + std::string(direction_name(e.direction)) + "," +
           std::to_string(e.support) + ",";
    if (e.folds) out += fmt(e.folds->mean) + "," + fmt(e.folds->sd) + "," + fmt(e.folds->min) + "," + fmt(e.folds->max);
    else out += ",,,";
    out += "\n";
  }
  return out;
}

}  // namespace akirisk
