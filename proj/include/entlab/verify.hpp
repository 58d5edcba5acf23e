#pragma once

#include <string>
#include <vector>

#include "entlab/harness.hpp"

namespace entlab {

/// One property check of the verification suite.
struct CheckResult {
  std::string id;
  std::string module;
  /// Name of the result the check exercises.
  std::string theorem;
  std::string description;
  bool passed = false;
  Json detail;
};

/// One numbered acceptance criterion. `detail` holds every measured value and
/// is byte-reproducible; wall time is kept separately.
struct CriterionResult {
  int number = 0;
  std::string id;
  std::string title;
  bool passed = false;
  std::string summary;
  Json detail;
  double seconds = 0.0;
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  std::vector<CriterionResult> criteria;
  bool self_check = false;
  bool passed = false;
  double seconds = 0.0;

  Json to_json() const;
};

/// Canonical scenarios behind the training-based criteria.
namespace scenarios {
ExperimentConfig collapse_bandit2();           // vanilla, eta 0.5, 500 steps
ExperimentConfig heavy_tail_bandit10();        // one step from a +2 peak, sampled
ExperimentConfig sensitivity_bandit10();       // entropy_reg base of the alpha sweep
Json sensitivity_grid();
ExperimentConfig klcov_bandit2();              // kl_cov k = 0.5, beta = 1
ExperimentConfig annealed_klcov(const std::string& task);  // inverse_time(100)
ExperimentConfig vanilla_rate_bandit2();       // eta 0.5, 2000 steps
ExperimentConfig snapshot_bandit10();          // vanilla run producing the mid-training snapshot
ExperimentConfig exp_law_bandit10();           // vanilla, eta 0.1, 2000 steps
}  // namespace scenarios

/// Module invariants. In self-check mode the clipping-identity formula is
/// replaced by a deliberately wrong variant so that its check must fail.
std::vector<CheckResult> run_property_checks(bool self_check = false);

/// Criteria 1..13.
CriterionResult run_criterion(int number, bool self_check = false);

/// Criteria 1..14. Criterion 14 reruns 1..13 and compares their details byte
/// for byte, and requires every property check and criterion to pass within
/// the time budget.
std::vector<CriterionResult> run_all_criteria(const std::vector<CheckResult>& checks, bool self_check = false);

VerifyReport verify_suite(bool self_check = false);

/// "[PASS] 5 entropy-collapse: ..." lines.
std::string format_criterion_line(const CriterionResult& r);

}  // namespace entlab
