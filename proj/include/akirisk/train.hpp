#pragma once

// Minibatch training of the causal transformer with imbalance-aware sampling and
// positive-row augmentation, plus the bag-of-codes logistic-regression baseline.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "akirisk/adam.hpp"
#include "akirisk/metrics.hpp"
#include "akirisk/model.hpp"
#include "akirisk/regression.hpp"

namespace akirisk {

enum class Sampler { uniform, weighted };

inline std::string_view sampler_name(Sampler s) { return s == Sampler::uniform ? "uniform" : "weighted"; }

inline Sampler parse_sampler(std::string_view s) {
  if (s == "uniform") return Sampler::uniform;
  if (s == "weighted") return Sampler::weighted;
  fail(Errc::invalid_config, "unknown sampler '" + std::string(s) + "'");
}

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 64;
  std::size_t epochs = 8;  // 0 returns the initial parameters
  std::uint64_t seed = 1;
  Sampler sampler = Sampler::uniform;
  double token_dropout = 0.1;
  double mask_rate = 0.1;
  double swap_rate = 0.2;  // chance of swapping each adjacent same-day pair
  bool augment_positives_only = true;
  std::size_t patience = 5;

  void validate() const {
    if (!(lr > 0)) fail(Errc::invalid_hyper, "lr must be positive");
    if (batch_size == 0) fail(Errc::invalid_hyper, "batch_size must be positive");
    for (double r : {token_dropout, mask_rate, swap_rate})
      if (!(r >= 0 && r <= 1)) fail(Errc::invalid_hyper, "augmentation rates must lie in [0,1]");
    if (patience == 0) fail(Errc::invalid_hyper, "patience must be positive");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"sampler", sampler_name(c.sampler)},
          {"token_dropout", c.token_dropout},
          {"mask_rate", c.mask_rate},
          {"swap_rate", c.swap_rate},
          {"augment_positives_only", c.augment_positives_only},
          {"patience", c.patience}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "lr") c.lr = v.get<double>();
      else if (k == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (k == "epochs") c.epochs = v.get<std::size_t>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "sampler") c.sampler = parse_sampler(v.get<std::string>());
      else if (k == "token_dropout") c.token_dropout = v.get<double>();
      else if (k == "mask_rate") c.mask_rate = v.get<double>();
      else if (k == "swap_rate") c.swap_rate = v.get<double>();
      else if (k == "augment_positives_only") c.augment_positives_only = v.get<bool>();
      else if (k == "patience") c.patience = v.get<std::size_t>();
      else fail(Errc::schema_error, "unknown train config key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::schema_error, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Encoded split ready for the model. `t` is the exposure flag of the target treatment.
struct Dataset {
  std::vector<std::string> ids;
  std::vector<EncodedSequence> seqs;
  std::vector<std::array<double, kFeatureDim>> features;
  std::vector<int> y, t;

  std::size_t size() const noexcept { return seqs.size(); }

  std::vector<const EncodedSequence*> pointers() const {
    std::vector<const EncodedSequence*> out;
    for (const auto& s : seqs) out.push_back(&s);
    return out;
  }
};

inline Dataset make_dataset(const std::vector<CohortRow>& rows, const Vocab& vocab, const FeatureScaler& scaler,
                            std::size_t max_len, const std::set<std::string>& treatment_codes = {}) {
  Dataset d;
  for (const auto& r : rows) {
    d.ids.push_back(r.patient_id);
    d.seqs.push_back(encode(r, vocab, max_len));
    d.features.push_back(scaler.transform(r));
    d.y.push_back(r.label);
    d.t.push_back(r.exposed_to(treatment_codes) ? 1 : 0);
  }
  return d;
}

/// Inverse-frequency sampling: each class carries half the total sampling mass.
class WeightedSampler {
 public:
  explicit WeightedSampler(std::span<const int> labels) {
    for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos_ : neg_).push_back(i);
    if (pos_.empty() || neg_.empty()) fail(Errc::single_class, "weighted sampling needs both classes");
  }

  /// Per-row weights (unnormalized), 1/n_class.
  double weight(int label) const { return 1.0 / static_cast<double>(label ? pos_.size() : neg_.size()); }

  std::size_t next(Rng& rng) const {
    const auto& pool = bernoulli(rng, 0.5) ? pos_ : neg_;
    return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
  }

 private:
  std::vector<std::size_t> pos_, neg_;
};

/// Token dropout (compacting the survivors), masking to UNK, then swaps of adjacent
/// tokens that share a day. Relative order across days is never changed.
inline EncodedSequence augment(const EncodedSequence& seq, const TrainConfig& c, Rng& rng) {
  EncodedSequence out = empty_sequence(seq.max_len());
  std::size_t n = 0;
  for (std::size_t i = 0; i < seq.max_len(); ++i) {
    if (!seq.mask[i]) continue;
    if (c.token_dropout > 0 && uniform01(rng) < c.token_dropout) continue;
    out.token_ids[n] = seq.token_ids[i];
    out.type_ids[n] = seq.type_ids[i];
    out.days[n] = seq.days[i];
    out.mask[n] = 1;
    ++n;
  }
  out.length = n;
  if (c.mask_rate > 0)
    for (std::size_t i = 0; i < n; ++i)
      if (uniform01(rng) < c.mask_rate) out.token_ids[i] = kUnkId;
  if (c.swap_rate > 0) {
    for (std::size_t i = 0; i + 1 < n; ++i) {
      if (out.days[i] != out.days[i + 1] || uniform01(rng) >= c.swap_rate) continue;
      std::swap(out.token_ids[i], out.token_ids[i + 1]);
      std::swap(out.type_ids[i], out.type_ids[i + 1]);
      ++i;
    }
  }
  return out;
}

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_loss = 0;  // mean BCE of the outcome head
  double val_auc = 0;
  double val_pr_auc = 0;
  double val_brier = 0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
};

inline std::string epoch_log_csv(const std::vector<EpochLog>& log, const std::string& meta = "") {
  std::string out = meta + "epoch,train_loss,val_loss,val_auc,val_pr_auc,val_brier\n";
  for (const auto& e : log)
    out += std::to_string(e.epoch) + "," + fmt(e.train_loss) + "," + fmt(e.val_loss) + "," + fmt(e.val_auc) + "," +
           fmt(e.val_pr_auc) + "," + fmt(e.val_brier) + "\n";
  return out;
}

namespace detail {

inline double mean_bce(std::span<const double> p, std::span<const int> y) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += bce(p[i], y[i]);
  return p.empty() ? 0.0 : s / static_cast<double>(p.size());
}

inline bool both_classes(std::span<const int> y) {
  const auto pos = count_positive(y);
  return pos > 0 && pos < y.size();
}

}  // namespace detail

/// Keeps the parameters of the epoch with the best validation PR-AUC (validation loss
/// when the validation split has a single class) and stops after `patience` epochs
/// without improvement.
inline TrainResult train(ModelParams init, const Dataset& tr, const Dataset& val, const TrainConfig& c) {
  c.validate();
  init.config.validate();
  if (tr.size() == 0 || val.size() == 0) fail(Errc::empty_train_split, "training needs non-empty train and validation splits");
  TrainResult res;
  res.params = std::move(init);
  if (c.epochs == 0) return res;

  ModelParams& p = res.params;
  const std::size_t n_pos = detail::count_positive(tr.y);
  if (p.config.loss_kind == LossKind::class_balanced) {
    auto [wn, wp] = class_balanced_weights(p.config.loss.cb_beta, tr.size() - n_pos, n_pos);
    p.config.loss.cb_weight_neg = wn;
    p.config.loss.cb_weight_pos = wp;
  }
  std::optional<WeightedSampler> sampler;
  if (c.sampler == Sampler::weighted) sampler.emplace(tr.y);

  Rng rng = substream(c.seed, "train");
  AdamState opt;
  const AdamHyper hyper{c.lr};
  ModelParams best = p;
  double best_score = -std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  const bool val_ranked = detail::both_classes(val.y);
  const auto val_ptrs = val.pointers();

  std::vector<std::size_t> order(tr.size());
  for (std::size_t epoch = 1; epoch <= c.epochs; ++epoch) {
    if (sampler) {
      for (auto& i : order) i = sampler->next(rng);
    } else {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
    }
    double loss_sum = 0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += c.batch_size) {
      const std::size_t end = std::min(order.size(), start + c.batch_size);
      std::vector<EncodedSequence> seqs;
      Batch batch;
      std::vector<int> y, t;
      seqs.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const bool aug = !c.augment_positives_only || tr.y[i] == 1;
        seqs.push_back(aug ? augment(tr.seqs[i], c, rng) : tr.seqs[i]);
        batch.features.push_back(tr.features[i]);
        y.push_back(tr.y[i]);
        t.push_back(tr.t[i]);
      }
      for (const auto& s : seqs) batch.seqs.push_back(&s);
      Graph g;
      const auto bound = bind(g, p, true);
      double value = 0;
      try {
        const Var loss = combined_loss_graph(forward(g, bound, p, batch, true, &rng), bound, p.config, y, t);
        value = loss.value().item();
        g.backward(loss);
      } catch (const Error& e) {
        if (e.code() == Errc::non_finite) fail(Errc::diverged, std::string("training diverged: ") + e.what());
        throw;
      }
      std::map<std::string, Tensor> grads;
      for (const auto& [name, v] : bound) {
        Tensor gr = g.grad(v);
        if (!gr.all_finite()) fail(Errc::diverged, "non-finite gradient for " + name);
        grads.emplace(name, std::move(gr));
      }
      adam_step(p.tensors, grads, opt, hyper);
      loss_sum += value;
      ++n_batches;
    }

    const auto out = predict(p, val_ptrs, val.features);
    EpochLog e;
    e.epoch = epoch;
    e.train_loss = loss_sum / static_cast<double>(n_batches);
    e.val_loss = detail::mean_bce(out.y_hat, val.y);
    e.val_brier = brier(out.y_hat, val.y);
    if (val_ranked) {
      e.val_auc = roc_auc(out.y_hat, val.y);
      e.val_pr_auc = pr_metrics(out.y_hat, val.y).average_precision;
    }
    if (!std::isfinite(e.train_loss) || !std::isfinite(e.val_loss)) fail(Errc::diverged, "non-finite epoch loss");
    res.log.push_back(e);
    const double score = val_ranked ? e.val_pr_auc : -e.val_loss;
    if (score > best_score) {
      best_score = score;
      best = p;
      res.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= c.patience) {
      break;
    }
  }
  res.params = std::move(best);
  return res;
}

/// Bag-of-codes design: one count column per non-reserved vocabulary id, then the
/// standardized scalar features.
inline Eigen::MatrixXd bag_of_codes(const std::vector<CohortRow>& rows, const Vocab& vocab, const FeatureScaler& scaler,
                                    bool with_codes = true, bool with_features = true) {
  const std::size_t n_codes = with_codes ? vocab.size() - 2 : 0, n_feat = with_features ? kFeatureDim : 0;
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n_codes + n_feat));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    if (with_codes)
      for (const auto& t : rows[i].tokens) {
        const int id = vocab.id(t.domain, t.code);
        if (id >= 2) x(r, id - 2) += 1.0;
      }
    if (with_features) {
      const auto f = scaler.transform(rows[i]);
      for (std::size_t k = 0; k < kFeatureDim; ++k) x(r, static_cast<Eigen::Index>(n_codes + k)) = f[k];
    }
  }
  return x;
}

struct BaselineResult {
  LogisticModel model;
  double ridge = 0;
  std::vector<double> val_scores, test_scores;
  MetricsReport report;
};

inline constexpr double kBaselineRidges[] = {1.0, 10.0, 100.0, 1000.0};

/// Ridge logistic regression on bag-of-codes counts plus scalar features, evaluated the
/// same way as the transformer (threshold on validation, metrics on test). Without a
/// fixed `ridge` the penalty is picked from kBaselineRidges by validation PR-AUC.
inline BaselineResult logistic_baseline(const std::vector<CohortRow>& train_rows, const std::vector<CohortRow>& val_rows,
                                        const std::vector<CohortRow>& test_rows, const Vocab& vocab,
                                        const FeatureScaler& scaler, std::optional<double> ridge = std::nullopt,
                                        bool with_codes = true, bool with_features = true) {
  if (train_rows.empty()) fail(Errc::empty_train_split, "baseline needs training rows");
  auto labels = [](const std::vector<CohortRow>& rows) {
    std::vector<int> out;
    for (const auto& r : rows) out.push_back(r.label);
    return out;
  };
  const Eigen::MatrixXd x_train = bag_of_codes(train_rows, vocab, scaler, with_codes, with_features);
  const Eigen::MatrixXd x_val = bag_of_codes(val_rows, vocab, scaler, with_codes, with_features);
  const std::vector<int> y_val = labels(val_rows);
  Eigen::VectorXd y(static_cast<Eigen::Index>(train_rows.size()));
  for (std::size_t i = 0; i < train_rows.size(); ++i) y(static_cast<Eigen::Index>(i)) = train_rows[i].label;
  auto scores = [](const LogisticModel& m, const Eigen::MatrixXd& x) {
    const Eigen::VectorXd p = m.predict(x);
    return std::vector<double>(p.data(), p.data() + p.size());
  };

  std::vector<double> grid(std::begin(kBaselineRidges), std::end(kBaselineRidges));
  if (ridge) grid = {*ridge};
  const bool rank_val = grid.size() > 1 && detail::both_classes(y_val);
  BaselineResult res;
  double best = -1;
  for (double r : grid) {
    IrlsOptions opt;
    opt.ridge = r;
    LogisticModel m = fit_logistic_robust(x_train, y, opt);
    std::vector<double> v = scores(m, x_val);
    const double score = rank_val ? pr_metrics(v, y_val).average_precision : 0.0;
    if (score > best) {
      best = score;
      res.model = std::move(m);
      res.ridge = r;
      res.val_scores = std::move(v);
    }
  }
  res.test_scores = scores(res.model, bag_of_codes(test_rows, vocab, scaler, with_codes, with_features));
  res.report = evaluate_split(res.val_scores, y_val, res.test_scores, labels(test_rows));
  return res;
}

}  // namespace akirisk
