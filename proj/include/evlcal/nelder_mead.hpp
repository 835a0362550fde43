#pragma once

#include <Eigen/Core>
#include <functional>
#include <vector>

namespace evlcal {

struct NelderMeadOptions {
  double reflection = 1.0;
  double expansion = 2.0;
  double contraction = 0.5;
  double shrink = 0.5;
  double spread_tol = 1e-6;  // stop when f(worst) - f(best) drops below this
  int max_evals = 400;
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int evals = 0;
};

// Downhill simplex minimization from an explicit initial simplex of n+1
// vertices. Deterministic.
NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                             const std::vector<Eigen::VectorXd>& initial_simplex,
                             const NelderMeadOptions& opts = {});

}  // namespace evlcal
