#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace pbsdet {

// Central finite differences at step h against an analytic gradient. The
// reported error is max_i |analytic_i - numeric_i| normalized by the largest
// gradient magnitude across all entries (coordinate-wise relative error is
// meaningless for near-zero entries).
double fd_max_rel_error(const std::function<double(const std::vector<double>&)>& f,
                        const std::vector<double>& x,
                        const std::vector<double>& analytic_grad,
                        double h = 1e-5);

struct CheckResult {
  std::string name;
  int trials = 0;
  double max_rel_err = 0;
  double tolerance = 0;
  bool pass = false;
};

// The full finite-difference suite: the three losses, each layer kind, the
// end-to-end composite for both heads, and the distillation loss. All in
// fp64 with step 1e-5.
std::vector<CheckResult> run_gradient_suite(int trials = 100, uint64_t seed = 7,
                                            double tolerance = 1e-6);

}  // namespace pbsdet
