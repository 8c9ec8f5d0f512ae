#pragma once

// File-staged pipeline: each command reads the artifacts of the previous stage from an
// input directory and writes its own into an output directory. Every artifact carries
// the root seed and a hash of the resolved run configuration.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "akirisk/causal.hpp"
#include "akirisk/cfx.hpp"
#include "akirisk/cohort.hpp"
#include "akirisk/csv.hpp"
#include "akirisk/metrics.hpp"
#include "akirisk/model.hpp"
#include "akirisk/report.hpp"
#include "akirisk/synthgen.hpp"
#include "akirisk/train.hpp"
#include "akirisk/vocab.hpp"

namespace akirisk {

namespace fs = std::filesystem;

struct RunConfig {
  std::uint64_t seed = 1;
  std::string preset = "default";  // default | confounded_null | null
  WindowSpec window;
  nlohmann::json gen_overrides = nlohmann::json::object();
  ModelConfig model = ModelConfig::desk();
  TrainConfig train;
  std::string target = "furosemide";  // exposure that feeds the propensity and potential-outcome heads
  std::array<double, 3> split{0.7, 0.15, 0.15};
  std::vector<std::string> ate_names;  // empty: every ingredient, then every category
  std::size_t ate_folds = 5;
  std::vector<std::string> lab_names;  // empty: every ingredient
  std::size_t bootstrap = 200;
  std::size_t min_support = 25;
  std::string catalog;  // optional catalog CSV used instead of the generated one

  /// Child seed for one named consumer of randomness.
  std::uint64_t derived_seed(std::string_view name) const { return substream(seed, name)(); }

  /// Generator settings after preset, overrides, window and seed are applied.
  GenConfig gen() const {
    GenConfig g;
    if (preset == "confounded_null") g = confounded_null_config(g.n_patients, 0);
    else if (preset == "null") g = null_config(g.n_patients, 0);
    else if (preset != "default") fail(Errc::invalid_config, "unknown preset '" + preset + "'");
    g = gen_config_from_json(gen_overrides, g);
    g.seed = derived_seed("gen");
    g.obs_days = window.observation_days;
    g.pred_days = window.prediction_days;
    return g;
  }

  ModelConfig model_config() const {
    ModelConfig m = model;
    m.obs_days = window.observation_days;
    return m;
  }

  TrainConfig train_config() const {
    TrainConfig t = train;
    t.seed = derived_seed("train");
    return t;
  }

  void validate() const {
    window.validate();
    akirisk::validate(gen());
    model_config().validate();
    train_config().validate();
    if (ate_folds < 2) fail(Errc::invalid_config, "ate.folds must be at least 2");
    if (bootstrap < 100) fail(Errc::invalid_config, "labs.bootstrap must be at least 100");
  }
};

/// Fully resolved configuration; its serialization is what the config hash covers.
inline nlohmann::json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"preset", c.preset},
          {"window", {{"observation_days", c.window.observation_days}, {"prediction_days", c.window.prediction_days}}},
          {"gen", to_json(c.gen())},
          {"model", to_json(c.model_config())},
          {"train", to_json(c.train_config())},
          {"target", c.target},
          {"split", c.split},
          {"ate", {{"names", c.ate_names}, {"folds", c.ate_folds}}},
          {"labs", {{"names", c.lab_names}, {"bootstrap", c.bootstrap}, {"min_support", c.min_support}}},
          {"catalog", c.catalog}};
}

/// Reads the keys present in `j` over `c`; unknown keys are a SchemaError.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c = {}) {
  if (!j.is_object()) fail(Errc::schema_error, "run config must be a JSON object");
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "preset") c.preset = v.get<std::string>();
      else if (k == "window") {
        for (const auto& [wk, wv] : v.items()) {
          if (wk == "observation_days") c.window.observation_days = wv.get<int>();
          else if (wk == "prediction_days") c.window.prediction_days = wv.get<int>();
          else fail(Errc::schema_error, "unknown window key '" + wk + "'");
        }
      } else if (k == "gen") c.gen_overrides.update(v);
      else if (k == "model") c.model = model_config_from_json(v, c.model);
      else if (k == "train") c.train = train_config_from_json(v, c.train);
      else if (k == "target") c.target = v.get<std::string>();
      else if (k == "split") c.split = v.get<std::array<double, 3>>();
      else if (k == "ate") {
        for (const auto& [ak, av] : v.items()) {
          if (ak == "names") c.ate_names = av.get<std::vector<std::string>>();
          else if (ak == "folds") c.ate_folds = av.get<std::size_t>();
          else fail(Errc::schema_error, "unknown ate key '" + ak + "'");
        }
      } else if (k == "labs") {
        for (const auto& [lk, lv] : v.items()) {
          if (lk == "names") c.lab_names = lv.get<std::vector<std::string>>();
          else if (lk == "bootstrap") c.bootstrap = lv.get<std::size_t>();
          else if (lk == "min_support") c.min_support = lv.get<std::size_t>();
          else fail(Errc::schema_error, "unknown labs key '" + lk + "'");
        }
      } else if (k == "catalog") c.catalog = v.get<std::string>();
      else fail(Errc::schema_error, "unknown run config key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::schema_error, std::string("run config: ") + e.what());
  }
  return c;
}

inline nlohmann::json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::schema_error, path.string() + ": " + e.what());
  }
}

inline RunConfig load_run_config(const fs::path& path, RunConfig base = {}) {
  if (path.extension() == ".toml") fail(Errc::schema_error, "TOML configs are not supported, use JSON: " + path.string());
  return run_config_from_json(read_json(path), std::move(base));
}

inline std::string config_hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(c).dump())));
  return buf;
}

/// Comment line that CSV outputs start with.
inline std::string csv_meta(const RunConfig& c) {
  return "# seed=" + std::to_string(c.seed) + " config_hash=" + config_hash(c) + "\n";
}

inline nlohmann::json stamped(const RunConfig& c, nlohmann::json j) {
  j["seed"] = c.seed;
  j["config_hash"] = config_hash(c);
  return j;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_file_atomic(path, j.dump(1) + "\n"); }

struct Paths {
  fs::path in = ".";
  fs::path out = ".";
};

namespace detail {

inline fs::path input(const Paths& p, const std::string& name) {
  const fs::path f = p.in / name;
  if (!fs::exists(f)) fail(Errc::missing_input, "required input " + f.string() + " does not exist");
  return f;
}

inline MedCatalog load_catalog(const RunConfig& c, const Paths& p) {
  const fs::path f = c.catalog.empty() ? input(p, "catalog.csv") : fs::path(c.catalog);
  if (!fs::exists(f)) fail(Errc::missing_input, "catalog " + f.string() + " does not exist");
  return MedCatalog(catalog_from_csv(read_csv(f)));
}

inline std::vector<CohortRow> rows_from_json(const nlohmann::json& arr) {
  std::vector<CohortRow> rows;
  rows.reserve(arr.size());
  for (const auto& r : arr) rows.push_back(row_from_json(r));
  return rows;
}

inline Split load_split(const Paths& p) {
  const auto j = read_json(input(p, "cohort.json"));
  try {
    const auto& s = j.at("split");
    return {rows_from_json(s.at("train")), rows_from_json(s.at("validation")), rows_from_json(s.at("test"))};
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::schema_error, std::string("cohort.json: ") + e.what());
  }
}

inline std::vector<int> labels_of(const std::vector<CohortRow>& rows) {
  std::vector<int> y;
  for (const auto& r : rows) y.push_back(r.label);
  return y;
}

inline std::vector<double> model_scores(const ModelParams& m, const std::vector<CohortRow>& rows, const Vocab& vocab) {
  const Dataset d = make_dataset(rows, vocab, m.scaler, m.config.max_len);
  return predict(m, d.pointers(), d.features).y_hat;
}

}  // namespace detail

/// events.csv, labs.csv, catalog.csv, patients.csv and truth.json.
inline void cmd_gen(const RunConfig& c, const Paths& p) {
  const GenConfig g = c.gen();
  const GenOutput out = generate(g);
  const std::string meta = csv_meta(c);
  write_file_atomic(p.out / "events.csv", events_to_csv(out.events, meta));
  write_file_atomic(p.out / "labs.csv", labs_to_csv(out.labs, meta));
  write_file_atomic(p.out / "catalog.csv", catalog_to_csv(out.catalog.entries(), meta));
  write_file_atomic(p.out / "patients.csv", patients_to_csv(out.patients, meta));
  nlohmann::json truth = to_json(ground_truth(g));
  const nlohmann::json gj = to_json(g);
  truth["planted_effects"] = gj["effects"];
  truth["interactions"] = gj["interactions"];
  write_json(p.out / "truth.json", stamped(c, std::move(truth)));
}

/// cohort.json (split rows and exclusion counts) and cohort_summary.json.
inline void cmd_cohort(const RunConfig& c, const Paths& p) {
  const auto events = events_from_csv(read_csv(detail::input(p, "events.csv")));
  const auto labs = labs_from_csv(read_csv(detail::input(p, "labs.csv")));
  const auto oc = outcome_codes();
  CohortBuild b = build_cohort(events, labs, c.window, {oc.begin(), oc.end()});
  std::vector<PatientRecord> patients;
  if (fs::exists(p.in / "patients.csv")) patients = patients_from_csv(read_csv(p.in / "patients.csv"));
  const CohortSummary summary = summarize_cohort(b.rows, c.window, patients);
  const Split s = time_aware_split(std::move(b.rows), c.split);
  auto arr = [](const std::vector<CohortRow>& rows) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& r : rows) a.push_back(row_to_json(r));
    return a;
  };
  nlohmann::json j;
  j["window"] = {{"observation_days", c.window.observation_days}, {"prediction_days", c.window.prediction_days}};
  j["counts"] = {{"n_patients", b.n_patients}, {"n_leakage", b.n_leakage}, {"n_insufficient", b.n_insufficient},
                 {"train", s.train.size()}, {"validation", s.validation.size()}, {"test", s.test.size()}};
  j["split"] = {{"train", arr(s.train)}, {"validation", arr(s.validation)}, {"test", arr(s.test)}};
  write_json(p.out / "cohort.json", stamped(c, std::move(j)));
  write_json(p.out / "cohort_summary.json", stamped(c, to_json(summary)));
}

/// vocab.json, model.json and epoch_log.csv.
inline void cmd_train(const RunConfig& c, const Paths& p) {
  const Split s = detail::load_split(p);
  const Vocab vocab = build_vocabs(s.train);
  const FeatureScaler scaler = FeatureScaler::fit(s.train);
  std::set<std::string> target;
  if (!c.target.empty()) target = detail::load_catalog(c, p).codes_for(c.target);
  const ModelConfig mc = c.model_config();
  ModelParams init = init_params(mc, vocab.size(), c.derived_seed("init"));
  init.scaler = scaler;
  const Dataset tr = make_dataset(s.train, vocab, scaler, mc.max_len, target);
  const Dataset val = make_dataset(s.validation, vocab, scaler, mc.max_len, target);
  const TrainResult res = train(std::move(init), tr, val, c.train_config());
  write_json(p.out / "vocab.json", stamped(c, vocab.to_json()));
  nlohmann::json ck = checkpoint_to_json(res.params);
  ck["best_epoch"] = res.best_epoch;
  write_json(p.out / "model.json", stamped(c, std::move(ck)));
  write_file_atomic(p.out / "epoch_log.csv", epoch_log_csv(res.log, csv_meta(c)));
}

/// metrics.json with the transformer and the logistic baseline on the test split, plus
/// PR and calibration curves. The threshold of each model is chosen on validation.
inline void cmd_eval(const RunConfig& c, const Paths& p) {
  const Split s = detail::load_split(p);
  const Vocab vocab = Vocab::from_json(read_json(detail::input(p, "vocab.json")));
  const ModelParams model = checkpoint_from_json(read_json(detail::input(p, "model.json")));
  if (model.vocab_size != vocab.size()) fail(Errc::schema_error, "model.json and vocab.json disagree on vocabulary size");
  const auto y_val = detail::labels_of(s.validation), y_test = detail::labels_of(s.test);
  const auto val_scores = detail::model_scores(model, s.validation, vocab);
  const auto test_scores = detail::model_scores(model, s.test, vocab);
  const MetricsReport tr = evaluate_split(val_scores, y_val, test_scores, y_test);
  const BaselineResult lr = logistic_baseline(s.train, s.validation, s.test, vocab, FeatureScaler::fit(s.train));

  nlohmann::json j;
  j["observation_days"] = c.window.observation_days;
  j["prediction_days"] = c.window.prediction_days;
  j["models"] = {{"transformer", to_json(tr)}, {"logistic_regression", to_json(lr.report)}};
  j["logistic_regression_ridge"] = lr.ridge;
  write_json(p.out / "metrics.json", stamped(c, std::move(j)));
  const std::string meta = csv_meta(c);
  write_file_atomic(p.out / "pr_curve.csv", pr_curve_csv(pr_metrics(test_scores, y_test), meta));
  write_file_atomic(p.out / "calibration.csv", calibration_csv(tr.calibration, meta));
  write_file_atomic(p.out / "pr_curve_logistic.csv", pr_curve_csv(pr_metrics(lr.test_scores, y_test), meta));
  write_file_atomic(p.out / "calibration_logistic.csv", calibration_csv(lr.report.calibration, meta));
}

inline std::vector<std::string> default_ate_names(const MedCatalog& cat) {
  auto names = cat.ingredients();
  for (const auto& k : cat.categories())
    if (!cat.has_ingredient(k)) names.push_back(k);
  return names;
}

/// effects.csv: counterfactual ATE of each name on the test split, with spread over K
/// contiguous folds of the trained (frozen) model.
inline void cmd_ate(const RunConfig& c, const Paths& p) {
  const Split s = detail::load_split(p);
  const Vocab vocab = Vocab::from_json(read_json(detail::input(p, "vocab.json")));
  const ModelParams model = checkpoint_from_json(read_json(detail::input(p, "model.json")));
  const MedCatalog cat = detail::load_catalog(c, p);
  const auto names = c.ate_names.empty() ? default_ate_names(cat) : c.ate_names;
  std::vector<AteEstimate> rows;
  for (const auto& n : names) rows.push_back(nested_fold_ate(model, s.test, c.ate_folds, n, cat, vocab));
  write_file_atomic(p.out / "effects.csv", effect_table_csv(rows, csv_meta(c)));
}

/// validation.csv: lab-marker changes by estimator for each ingredient over the whole cohort.
inline void cmd_labs(const RunConfig& c, const Paths& p) {
  Split s = detail::load_split(p);
  std::vector<CohortRow> all = std::move(s.train);
  for (auto* part : {&s.validation, &s.test}) all.insert(all.end(), std::make_move_iterator(part->begin()), std::make_move_iterator(part->end()));
  const auto labs = labs_from_csv(read_csv(detail::input(p, "labs.csv")));
  const MedCatalog cat = detail::load_catalog(c, p);
  ValidationOptions opt;
  opt.min_support = c.min_support;
  opt.inference.bootstrap = c.bootstrap;
  opt.inference.seed = c.derived_seed("bootstrap");
  std::vector<MedicationValidation> meds;
  for (const auto& n : c.lab_names.empty() ? cat.ingredients() : c.lab_names)
    meds.push_back(validate_medication(labs, all, c.window, cat, n, opt));
  write_file_atomic(p.out / "validation.csv", validation_csv(meds, csv_meta(c)));
}

/// table1.csv, table2.csv, table4.csv and report.json. `extra_metrics` adds metrics
/// files from other observation windows to the metrics table.
inline void cmd_report(const RunConfig& c, const Paths& p, const std::vector<fs::path>& extra_metrics = {}) {
  const CohortSummary summary = cohort_summary_from_json(read_json(detail::input(p, "cohort_summary.json")));
  std::vector<MetricsEntry> entries;
  auto add_metrics = [&](const fs::path& f) {
    if (!fs::exists(f)) fail(Errc::missing_input, "required input " + f.string() + " does not exist");
    const auto j = read_json(f);
    try {
      const int w = j.at("observation_days").get<int>();
      for (const auto& [name, r] : j.at("models").items()) entries.push_back({name, w, metrics_from_json(r)});
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::schema_error, f.string() + ": " + e.what());
    }
  };
  add_metrics(p.in / "metrics.json");
  for (const auto& f : extra_metrics) add_metrics(f);
  const CsvTable effects = read_csv(detail::input(p, "effects.csv"));
  std::optional<CsvTable> validation;
  if (fs::exists(p.in / "validation.csv")) validation = read_csv(p.in / "validation.csv");

  const std::string meta = csv_meta(c);
  const TableRows t1 = table1_rows(summary);
  const auto [h2, t2] = table2(entries);
  const TableRows t4 = table4_rows(effects, validation);
  write_file_atomic(p.out / "table1.csv", table_csv(kTable1Header, t1, meta));
  write_file_atomic(p.out / "table2.csv", table_csv(h2, t2, meta));
  write_file_atomic(p.out / "table4.csv", table_csv(kTable4Header, t4, meta));

  nlohmann::json j;
  j["cohort_characteristics"] = {{"columns", kTable1Header}, {"rows", table_json(kTable1Header, t1)}};
  j["metrics"] = {{"columns", h2}, {"rows", table_json(h2, t2)}};
  j["effects"] = {{"columns", kTable4Header}, {"rows", table_json(kTable4Header, t4)}};
  nlohmann::json lab = nlohmann::json::array();
  if (validation) lab = table_json(validation->header, validation->rows);
  j["lab_validation"] = {{"columns", validation ? validation->header : std::vector<std::string>{}}, {"rows", lab}};
  write_json(p.out / "report.json", stamped(c, std::move(j)));
}

/// Every stage in order, all artifacts in one directory.
inline void cmd_pipeline(const RunConfig& c, const fs::path& dir) {
  const Paths p{dir, dir};
  cmd_gen(c, p);
  cmd_cohort(c, p);
  cmd_train(c, p);
  cmd_eval(c, p);
  cmd_ate(c, p);
  cmd_labs(c, p);
  cmd_report(c, p);
}

/// One-line JSON error record for stderr.
inline std::string error_record(const std::string& command, const Error& e) {
  return nlohmann::json{{"error", std::string(errc_name(e.code()))}, {"command", command}, {"message", e.what()}}.dump();
}

}  // namespace akirisk
