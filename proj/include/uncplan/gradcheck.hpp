#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace uncplan {

struct GradCheckReport {
  int n_configs = 0;
  int n_coords = 0;
  int n_failures = 0;
  double max_rel_err = 0.0;
  std::vector<std::string> lines;  // one summary line per configuration
};

// Central finite differences vs the tape's backward pass on random tiny
// planner configurations (mixed aggregators, channel modes and depths).
// rel err = |analytic - fd| / max(|analytic| + |fd|, 1e-3).
GradCheckReport run_gradcheck(int n_configs, double tol, std::uint64_t seed);

}  // namespace uncplan
