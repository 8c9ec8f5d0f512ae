#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace akirisk {

enum class Errc {
  shape_mismatch,
  non_finite,
  disconnected_graph,
  invalid_config,
  empty_cohort,
  invalid_fractions,
  empty_train_split,
  unknown_ingredient,
  invalid_hyper,
  diverged,
  single_class,
  no_positives,
  no_feasible_threshold,
  singular_system,
  fold_too_small,
  no_eligible_rows,
  single_arm,
  non_convergence,
  degenerate_resample,
  invalid_p,
  missing_input,
  schema_error,
};

inline std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::non_finite: return "NonFinite";
    case Errc::disconnected_graph: return "DisconnectedGraph";
    case Errc::invalid_config: return "InvalidConfig";
    case Errc::empty_cohort: return "EmptyCohort";
    case Errc::invalid_fractions: return "InvalidFractions";
    case Errc::empty_train_split: return "EmptyTrainSplit";
    case Errc::unknown_ingredient: return "UnknownIngredient";
    case Errc::invalid_hyper: return "InvalidHyper";
    case Errc::diverged: return "Diverged";
    case Errc::single_class: return "SingleClass";
    case Errc::no_positives: return "NoPositives";
    case Errc::no_feasible_threshold: return "NoFeasibleThreshold";
    case Errc::singular_system: return "SingularSystem";
    case Errc::fold_too_small: return "FoldTooSmall";
    case Errc::no_eligible_rows: return "NoEligibleRows";
    case Errc::single_arm: return "SingleArm";
    case Errc::non_convergence: return "NonConvergence";
    case Errc::degenerate_resample: return "DegenerateResample";
    case Errc::invalid_p: return "InvalidP";
    case Errc::missing_input: return "MissingInput";
    case Errc::schema_error: return "SchemaError";
  }
  return "Unknown";
}

/// Every failure in the library surfaces as this exception; `code()` names the contract that was violated.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) { throw Error(code, message); }

}  // namespace akirisk
