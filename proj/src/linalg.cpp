#include "ivselect/linalg.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <sstream>

namespace ivsel {

double sv_ratio(const Eigen::MatrixXd& a) {
  if (a.rows() == 0 || a.cols() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& sv = svd.singularValues();
  double smax = sv(0);
  if (smax <= 0.0) return 0.0;
  return sv(sv.size() - 1) / smax;
}

namespace {

// Singular values of a equal those of the triangular factor of its QR, so the
// rank check runs on the small k x k block instead of the full n x k matrix.
double qr_sv_ratio(const Eigen::HouseholderQR<Eigen::MatrixXd>& qr, Eigen::Index cols) {
  Eigen::MatrixXd r = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
  return sv_ratio(r);
}

void check_rank(double ratio, Eigen::Index rows, Eigen::Index cols) {
  if (!(ratio >= kRankTol)) {
    std::ostringstream msg;
    msg << "rank-deficient design (" << rows << "x" << cols
        << "): singular value ratio " << ratio << " below tolerance " << kRankTol;
    throw RankError(msg.str(), ratio);
  }
}

}  // namespace

Eigen::MatrixXd lstsq(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows()) throw ValidationError("lstsq: row count mismatch");
  if (a.rows() < a.cols()) throw ValidationError("lstsq: fewer rows than columns");
  if (a.cols() == 0) return Eigen::MatrixXd::Zero(0, b.cols());
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  check_rank(qr_sv_ratio(qr, a.cols()), a.rows(), a.cols());
  return qr.solve(b);
}

LstsqResult lstsq_with_gram_inverse(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows()) throw ValidationError("lstsq: row count mismatch");
  if (a.rows() < a.cols()) throw ValidationError("lstsq: fewer rows than columns");
  LstsqResult out;
  if (a.cols() == 0) {
    out.coef = Eigen::MatrixXd::Zero(0, b.cols());
    out.gram_inverse = Eigen::MatrixXd::Zero(0, 0);
    out.sv_ratio = 0.0;
    return out;
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  out.sv_ratio = qr_sv_ratio(qr, a.cols());
  check_rank(out.sv_ratio, a.rows(), a.cols());
  out.coef = qr.solve(b);
  // (a'a)^-1 = r^-1 r^-T from the triangular factor.
  Eigen::MatrixXd r = qr.matrixQR().topRows(a.cols()).triangularView<Eigen::Upper>();
  Eigen::MatrixXd rinv = r.triangularView<Eigen::Upper>().solve(
      Eigen::MatrixXd::Identity(a.cols(), a.cols()));
  out.gram_inverse = rinv * rinv.transpose();
  out.gram_inverse = 0.5 * (out.gram_inverse + out.gram_inverse.transpose()).eval();
  return out;
}

Eigen::MatrixXd annihilate(const Eigen::MatrixXd& m, const Eigen::MatrixXd& b) {
  if (b.cols() == 0) return m;
  return m - b * lstsq(b, m);
}

double chi2_upper_tail(double x, int df) {
  if (df < 1) throw ValidationError("chi2_upper_tail: df must be >= 1");
  if (x <= 0.0) return 1.0;
  boost::math::chi_squared dist(static_cast<double>(df));
  return boost::math::cdf(boost::math::complement(dist, x));
}

}  // namespace ivsel
