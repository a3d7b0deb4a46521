#pragma once

#include <Eigen/Dense>
#include <vector>

#include "ivselect/dataset.hpp"

namespace ivsel {

struct FirstStage {
  Eigen::MatrixXd pi_hat;  // kz x kx coefficient matrix
  Eigen::MatrixXd x_hat;   // n x kx fitted exposures
};

// Regresses each exposure on the full instrument matrix.
FirstStage first_stage(const Dataset& data);

// 2SLS fit of y on [X, Z_inv] using all of Z as instruments, where Z_inv are
// the columns listed in invalid_set (instruments allowed a direct effect).
struct TwoSLSFit {
  std::vector<int> invalid_set;  // sorted
  Eigen::VectorXd beta_hat;      // kx
  Eigen::VectorXd alpha_hat;     // |invalid_set|
  Eigen::VectorXd residuals;     // y - X beta_hat - Z_inv alpha_hat
  double sigma2_hat = 0.0;       // rss / n
  double rss = 0.0;
  Eigen::MatrixXd vcov;          // sigma2_hat * (Rhat' Rhat)^-1, order (beta, alpha)
  int n = 0, kx = 0, kz = 0;

  int df() const { return kz - kx - static_cast<int>(invalid_set.size()); }
  Eigen::VectorXd std_errors() const;
};

TwoSLSFit fit_2sls(const Dataset& data, std::vector<int> invalid_set);

// Overidentification test of the fitted model. With zero degrees of freedom
// the statistic is 0 and the p-value 1 by convention.
struct SarganResult {
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
};

SarganResult sargan(const TwoSLSFit& fit, const Dataset& data);

}  // namespace ivsel
