#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace boxboot {

struct SuiteResult {
  std::string name;
  double max_rel_err = 0.0;
  double tol = 0.0;
  bool pass() const { return max_rel_err <= tol; }
};

// Finite-difference suites over the analytic gradients: the closed-form
// binary losses (1000 random points each), the Monte-Carlo multi-class loss
// with fixed eps (looser tolerance), and an end-to-end check through the
// network on 8x8 inputs.
SuiteResult suite_bce_plain(std::uint64_t seed);
SuiteResult suite_l2_unc(std::uint64_t seed);
SuiteResult suite_bce_unc_bootstrap(std::uint64_t seed);
SuiteResult suite_multiclass(std::uint64_t seed);
SuiteResult suite_diffnet(std::uint64_t seed);

std::vector<SuiteResult> run_all_suites(std::uint64_t seed);

}  // namespace boxboot
