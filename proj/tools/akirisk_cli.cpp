#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "akirisk/cli.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> obs_days, pred_days;
  std::string out = ".";
  std::string in;
  std::vector<std::string> metrics;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "JSON run configuration")->envname("AKI_CONFIG");
  sub->add_option("--seed", f.seed, "Root seed; every random stream derives from it")->envname("AKI_SEED");
  sub->add_option("--obs-days", f.obs_days, "Observation window length in days (90 or 365)")
      ->envname("AKI_OBS_DAYS")
      ->check(CLI::IsMember({90, 365}));
  sub->add_option("--pred-days", f.pred_days, "Prediction window length in days")->envname("AKI_PRED_DAYS")->check(CLI::PositiveNumber);
  sub->add_option("--out", f.out, "Output directory")->envname("AKI_OUT")->capture_default_str();
  sub->add_option("--in", f.in, "Input directory (defaults to --out)")->envname("AKI_IN");
}

akirisk::RunConfig resolve(const Flags& f) {
  akirisk::RunConfig c;
  if (!f.config.empty()) c = akirisk::load_run_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.obs_days) c.window.observation_days = *f.obs_days;
  if (f.pred_days) c.window.prediction_days = *f.pred_days;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dialysis-risk modeling pipeline on synthetic EHR data: generation, cohort, transformer training, "
               "evaluation, counterfactual effects, lab-marker validation and summary tables."};
  app.require_subcommand(1);
  Flags flags;
  struct Cmd {
    const char* name;
    const char* help;
  };
  const std::vector<Cmd> cmds{
      {"gen", "Generate events.csv, labs.csv, catalog.csv, patients.csv and truth.json"},
      {"cohort", "Build cohort.json and cohort_summary.json from events and labs"},
      {"train", "Train the transformer; writes vocab.json, model.json and epoch_log.csv"},
      {"eval", "Evaluate the model and the logistic baseline; writes metrics.json and curves"},
      {"ate", "Counterfactual effect per ingredient and category; writes effects.csv"},
      {"labs", "Lab-marker validation per ingredient; writes validation.csv"},
      {"report", "Collate tables into table1.csv, table2.csv, table4.csv and report.json"},
      {"pipeline", "Run every stage in order in the output directory"},
  };
  for (const auto& c : cmds) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_common(sub, flags);
    if (std::string(c.name) == "report")
      sub->add_option("--metrics", flags.metrics, "Extra metrics.json files, e.g. from another observation window")
          ->check(CLI::ExistingFile);
  }
  CLI11_PARSE(app, argc, argv);

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    const akirisk::RunConfig cfg = resolve(flags);
    const akirisk::Paths paths{flags.in.empty() ? flags.out : flags.in, flags.out};
    std::filesystem::create_directories(paths.out);
    if (name == "gen") akirisk::cmd_gen(cfg, paths);
    else if (name == "cohort") akirisk::cmd_cohort(cfg, paths);
    else if (name == "train") akirisk::cmd_train(cfg, paths);
    else if (name == "eval") akirisk::cmd_eval(cfg, paths);
    else if (name == "ate") akirisk::cmd_ate(cfg, paths);
    else if (name == "labs") akirisk::cmd_labs(cfg, paths);
    else if (name == "report") {
      std::vector<std::filesystem::path> extra(flags.metrics.begin(), flags.metrics.end());
      akirisk::cmd_report(cfg, paths, extra);
    } else akirisk::cmd_pipeline(cfg, paths.out);
  } catch (const akirisk::Error& e) {
    std::cerr << akirisk::error_record(name, e) << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "Internal"}, {"command", name}, {"message", e.what()}}.dump() << "\n";
    return 3;
  }
  return 0;
}
