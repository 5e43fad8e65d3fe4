#pragma once

// Exact property checks over the numeric modules, each compared against an
// independent oracle. Shared by `duo selftest` and the acceptance binary.

#include <functional>
#include <string>
#include <vector>

namespace duo::harness {

struct CheckResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;  // worst observed error and sample counts
  double seconds = 0.0;
  double budget_seconds = 0.0;
};

CheckResult check_lf_identity();
CheckResult check_psd();
CheckResult check_conjugate_reductions();
CheckResult check_gradients();
CheckResult check_geometric_nulls();
CheckResult check_fusion_oracles();

// Runs `fn`, recording wall time; a check over budget fails.
CheckResult timed(const std::function<CheckResult()>& fn);

std::vector<CheckResult> run_property_suite();

std::string format_result(const CheckResult& r);

}  // namespace duo::harness
