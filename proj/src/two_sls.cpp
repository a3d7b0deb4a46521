#include "ivselect/two_sls.hpp"

#include <algorithm>
#include <sstream>

#include "ivselect/linalg.hpp"

namespace ivsel {

namespace {

void check_invalid_set(const std::vector<int>& inv, int kz) {
  for (std::size_t i = 0; i < inv.size(); ++i) {
    if (inv[i] < 0 || inv[i] >= kz)
      throw ValidationError("invalid_set: instrument index out of range");
    if (i > 0 && inv[i] <= inv[i - 1])
      throw ValidationError("invalid_set: indices must be unique");
  }
}

}  // namespace

FirstStage first_stage(const Dataset& data) {
  FirstStage fs;
  fs.pi_hat = lstsq(data.Z, data.X);
  fs.x_hat = data.Z * fs.pi_hat;
  return fs;
}

Eigen::VectorXd TwoSLSFit::std_errors() const {
  return vcov.diagonal().cwiseMax(0.0).cwiseSqrt();
}

TwoSLSFit fit_2sls(const Dataset& data, std::vector<int> invalid_set) {
  std::sort(invalid_set.begin(), invalid_set.end());
  check_invalid_set(invalid_set, data.kz());

  const int n = data.n();
  const int kx = data.kx();
  const int kz = data.kz();
  const int ki = static_cast<int>(invalid_set.size());
  if (kz - ki < kx) {
    std::ostringstream msg;
    msg << "underidentified: " << kz - ki << " excluded instruments for " << kx << " exposures";
    throw NumericError(msg.str());
  }

  FirstStage fs = first_stage(data);

  Eigen::MatrixXd rhat(n, kx + ki);
  rhat.leftCols(kx) = fs.x_hat;
  for (int t = 0; t < ki; ++t) rhat.col(kx + t) = data.Z.col(invalid_set[t]);

  LstsqResult ls = lstsq_with_gram_inverse(rhat, data.y);

  TwoSLSFit fit;
  fit.invalid_set = std::move(invalid_set);
  fit.beta_hat = ls.coef.topRows(kx);
  fit.alpha_hat = ls.coef.bottomRows(ki);
  fit.residuals = data.y - data.X * fit.beta_hat;
  for (int t = 0; t < ki; ++t)
    fit.residuals -= data.Z.col(fit.invalid_set[t]) * fit.alpha_hat(t);
  fit.rss = fit.residuals.squaredNorm();
  fit.n = n;
  fit.kx = kx;
  fit.kz = kz;
  fit.sigma2_hat = fit.rss / n;
  fit.vcov = fit.sigma2_hat * ls.gram_inverse;
  return fit;
}

SarganResult sargan(const TwoSLSFit& fit, const Dataset& data) {
  if (data.n() != fit.n || data.kz() != fit.kz || data.kx() != fit.kx)
    throw ValidationError("sargan: fit does not match dataset");
  SarganResult res;
  res.df = fit.df();
  if (res.df == 0) return res;  // statistic 0, p-value 1

  const Eigen::VectorXd& u = fit.residuals;
  double denom = fit.rss / fit.n;
  // A numerically perfect fit carries no overidentification evidence.
  double scale = std::max(1.0, data.y.squaredNorm());
  if (fit.rss <= 1e-24 * scale) return res;

  Eigen::VectorXd proj_coef = lstsq(data.Z, u);
  double quad = u.dot(data.Z * proj_coef);
  res.statistic = std::max(0.0, quad / denom);
  res.p_value = chi2_upper_tail(res.statistic, res.df);
  return res;
}

}  // namespace ivsel
