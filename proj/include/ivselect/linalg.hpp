#pragma once

#include <Eigen/Dense>

#include "ivselect/errors.hpp"

namespace ivsel {

// A matrix counts as rank deficient when smallest/largest singular value
// falls below this ratio. Scale-free by construction.
inline constexpr double kRankTol = 1e-10;

// Smallest/largest singular value of a. Returns 0 for a zero matrix.
double sv_ratio(const Eigen::MatrixXd& a);

// Least-squares solve min ||a x - b|| via Householder QR. Throws RankError
// when the singular value ratio of a is below kRankTol. Requires rows >= cols.
Eigen::MatrixXd lstsq(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// lstsq that also returns (a'a)^-1, needed for coefficient covariances.
struct LstsqResult {
  Eigen::MatrixXd coef;
  Eigen::MatrixXd gram_inverse;
  double sv_ratio = 0.0;
};
LstsqResult lstsq_with_gram_inverse(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// m minus its projection onto the column span of b: m - b * lstsq(b, m).
// Columns of the result are orthogonal to the columns of b.
Eigen::MatrixXd annihilate(const Eigen::MatrixXd& m, const Eigen::MatrixXd& b);

// Upper tail probability P(chi2_df > x). df >= 1; x < 0 is treated as 0.
double chi2_upper_tail(double x, int df);

}  // namespace ivsel
