#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "ivselect/dataset.hpp"

namespace ivsel {

// Penalty weights 1/|alpha_init_j|^nu. Instruments whose initial estimate is
// exactly zero get an infinite weight and stay out of the path for good.
struct AdaptiveWeights {
  Eigen::VectorXd weights;        // finite entries only meaningful where not frozen
  double nu = 1.0;
  std::vector<int> frozen_valid;  // sorted indices with infinite weight

  bool frozen(int j) const;
  static AdaptiveWeights from_initial_alpha(const Eigen::VectorXd& alpha_init, double nu = 1.0);
};

// Instruments with the projected exposures removed: annihilate(Z, x_hat).
// Columns span a space of dimension kz - kx.
Eigen::MatrixXd build_ztilde(const Dataset& data);

enum class PathEvent { Enter, Drop, Terminal };

struct PathBreakpoint {
  double lambda = 0.0;
  PathEvent event = PathEvent::Terminal;
  int index = -1;               // instrument entering or leaving; -1 for terminal
  std::vector<int> active_set;  // sorted, after the event
  Eigen::VectorXd alpha;        // full-length coefficients at this lambda
};

// Piecewise-linear solution path of
//   min 0.5 ||y - ztilde a||^2 + lambda sum_j w_j |a_j|
// traced from lambda = +inf down to 0, with drop steps. The final breakpoint
// is always a terminal node at lambda = 0 so evaluation is defined on [0, inf).
struct LarsPath {
  int kz = 0;
  int max_active = 0;
  std::vector<PathBreakpoint> breakpoints;  // lambda strictly decreasing
  std::vector<int> entry_order;             // first entries only
  std::vector<std::string> warnings;

  Eigen::VectorXd coeffs_at(double lambda) const;
};

// max_active < 0 means "infer the rank of ztilde". Pass kz - kx when known.
LarsPath lars_weighted_path(const Eigen::MatrixXd& ztilde, const Eigen::VectorXd& y,
                            const AdaptiveWeights& weights, int max_active = -1);

// Coefficients at an arbitrary penalty, exact at breakpoints.
Eigen::VectorXd adaptive_lasso_at(const LarsPath& path, double lambda);

// Exposure coefficients implied by a direct-effect vector:
// lstsq(x_hat, y - Z alpha).
Eigen::VectorXd beta_from_alpha(const Dataset& data, const Eigen::VectorXd& alpha);

}  // namespace ivsel
