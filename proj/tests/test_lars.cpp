#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "ivselect/dataset.hpp"
#include "ivselect/errors.hpp"
#include "ivselect/lars.hpp"
#include "ivselect/median_tree.hpp"
#include "ivselect/rng.hpp"
#include "ivselect/simulate.hpp"
#include "ivselect/two_sls.hpp"

using ivsel::AdaptiveWeights;
using ivsel::Dataset;
using ivsel::LarsPath;
using ivsel::PathEvent;
using ivsel::RngBlock;
using ivsel::SplitStream;
using ivsel::ValidationError;

namespace {

Eigen::MatrixXd random_matrix(int rows, int cols, std::uint64_t seed, std::uint64_t rep) {
  SplitStream stream(seed, rep, RngBlock::Instruments);
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = stream.normal();
  return m;
}

AdaptiveWeights plain_weights(const Eigen::VectorXd& w) {
  AdaptiveWeights out;
  out.weights = w;
  return out;
}

// Cyclic coordinate descent for the same weighted objective. Independent of
// the path algorithm; converges to the unique minimizer when the design has
// full column rank.
Eigen::VectorXd cd_lasso(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y,
                         const AdaptiveWeights& w, double lambda) {
  const int k = static_cast<int>(Z.cols());
  Eigen::VectorXd a = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd znorm2(k);
  for (int j = 0; j < k; ++j) znorm2(j) = Z.col(j).squaredNorm();
  Eigen::VectorXd r = y;
  for (int it = 0; it < 200000; ++it) {
    double max_delta = 0.0;
    for (int j = 0; j < k; ++j) {
      if (w.frozen(j)) continue;
      double rho = Z.col(j).dot(r) + znorm2(j) * a(j);
      double thr = lambda * w.weights(j);
      double next = 0.0;
      if (rho > thr)
        next = (rho - thr) / znorm2(j);
      else if (rho < -thr)
        next = (rho + thr) / znorm2(j);
      double delta = next - a(j);
      if (delta != 0.0) {
        r -= Z.col(j) * delta;
        a(j) = next;
        max_delta = std::max(max_delta, std::abs(delta));
      }
    }
    if (max_delta < 1e-13 * std::max(1.0, a.cwiseAbs().maxCoeff())) break;
  }
  return a;
}

// Stationarity certificate: active coordinates sit exactly on the penalty
// boundary with the right sign, inactive ones inside it.
void check_kkt(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const AdaptiveWeights& w,
               const ivsel::PathBreakpoint& bp) {
  double tol = 1e-8 * std::max(1.0, y.norm());
  Eigen::VectorXd r = y - Z * bp.alpha;
  for (int j = 0; j < Z.cols(); ++j) {
    if (w.frozen(j)) continue;
    double corr = Z.col(j).dot(r);
    double bound = bp.lambda * w.weights(j);
    if (bp.alpha(j) != 0.0) {
      double sign = bp.alpha(j) > 0 ? 1.0 : -1.0;
      CHECK(std::abs(corr - sign * bound) < tol);
    } else {
      CHECK(std::abs(corr) <= bound + tol);
    }
  }
}

struct RandomProblem {
  Eigen::MatrixXd Z;
  Eigen::VectorXd y;
  AdaptiveWeights w;
};

// Correlated columns and a sparse mixed-sign target make drop events common.
RandomProblem make_problem(std::uint64_t seed) {
  SplitStream dims(seed, 0, RngBlock::SeedDerivation);
  int n = 30 + static_cast<int>(dims.below(171));
  int k = 2 + static_cast<int>(dims.below(11));
  SplitStream stream(seed, 1, RngBlock::Instruments);
  Eigen::VectorXd factor(n);
  for (int i = 0; i < n; ++i) factor(i) = stream.normal();
  Eigen::MatrixXd Z(n, k);
  for (int j = 0; j < k; ++j)
    for (int i = 0; i < n; ++i) Z(i, j) = 0.8 * factor(i) + 0.6 * stream.normal();
  Eigen::VectorXd target = Eigen::VectorXd::Zero(k);
  int support = 1 + static_cast<int>(dims.below(static_cast<std::uint64_t>(k)));
  for (int j = 0; j < support; ++j) target(j) = (j % 2 == 0 ? 1.5 : -2.0);
  Eigen::VectorXd y = Z * target;
  for (int i = 0; i < n; ++i) y(i) += stream.normal();
  AdaptiveWeights w;
  w.weights.resize(k);
  for (int j = 0; j < k; ++j) w.weights(j) = 0.2 + std::abs(stream.normal());
  return {Z, y, w};
}

void check_path_shape(const LarsPath& path) {
  REQUIRE(!path.breakpoints.empty());
  CHECK(path.breakpoints.back().event == PathEvent::Terminal);
  CHECK(path.breakpoints.back().lambda == 0.0);
  CHECK(path.breakpoints.back().index == -1);
  std::size_t active_before = 0;
  for (std::size_t i = 0; i < path.breakpoints.size(); ++i) {
    const auto& bp = path.breakpoints[i];
    if (i > 0) CHECK(bp.lambda < path.breakpoints[i - 1].lambda);
    CHECK(static_cast<int>(bp.active_set.size()) <= path.max_active);
    CHECK(std::is_sorted(bp.active_set.begin(), bp.active_set.end()));
    if (bp.event == PathEvent::Enter) {
      CHECK(bp.active_set.size() == active_before + 1);
      CHECK(std::binary_search(bp.active_set.begin(), bp.active_set.end(), bp.index));
    } else if (bp.event == PathEvent::Drop) {
      CHECK(bp.active_set.size() == active_before - 1);
      CHECK(!std::binary_search(bp.active_set.begin(), bp.active_set.end(), bp.index));
      CHECK(bp.alpha(bp.index) == 0.0);
    }
    for (int j = 0; j < path.kz; ++j)
      if (bp.alpha(j) != 0.0)
        CHECK(std::binary_search(bp.active_set.begin(), bp.active_set.end(), j));
    active_before = bp.active_set.size();
  }
}

}  // namespace

TEST_CASE("hand-checked three-column orthogonal path") {
  Eigen::MatrixXd Z = Eigen::MatrixXd::Identity(3, 3);
  Eigen::VectorXd y(3);
  y << 3.0, 2.0, 1.0;
  Eigen::VectorXd w(3);
  w << 1.0, 1.0, 2.0;
  LarsPath path = ivsel::lars_weighted_path(Z, y, plain_weights(w));

  REQUIRE(path.breakpoints.size() == 4);
  CHECK(path.entry_order == std::vector<int>{0, 1, 2});

  CHECK(path.breakpoints[0].lambda == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(path.breakpoints[0].event == PathEvent::Enter);
  CHECK(path.breakpoints[0].index == 0);
  CHECK(path.breakpoints[0].alpha.cwiseAbs().maxCoeff() == 0.0);

  CHECK(path.breakpoints[1].lambda == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(path.breakpoints[1].index == 1);
  CHECK(path.breakpoints[1].alpha(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(path.breakpoints[1].alpha(1) == 0.0);

  CHECK(path.breakpoints[2].lambda == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(path.breakpoints[2].index == 2);
  CHECK(path.breakpoints[2].alpha(0) == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(path.breakpoints[2].alpha(1) == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(path.breakpoints[2].alpha(2) == doctest::Approx(0.0).epsilon(1e-12));

  CHECK(path.breakpoints[3].event == PathEvent::Terminal);
  CHECK(path.breakpoints[3].alpha(0) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(path.breakpoints[3].alpha(1) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(path.breakpoints[3].alpha(2) == doctest::Approx(1.0).epsilon(1e-12));

  // Between knots the coefficients move linearly: a_0 = 3 - lambda,
  // a_1 = 2 - lambda, a_2 = 1 - 2 lambda on their own segments.
  Eigen::VectorXd at = path.coeffs_at(2.5);
  CHECK(at(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(at(1) == 0.0);
  at = path.coeffs_at(0.25);
  CHECK(at(0) == doctest::Approx(2.75).epsilon(1e-12));
  CHECK(at(1) == doctest::Approx(1.75).epsilon(1e-12));
  CHECK(at(2) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(path.coeffs_at(10.0).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(path.coeffs_at(-1.0), ValidationError);
}

TEST_CASE("random problems satisfy the stationarity certificate and match "
          "coordinate descent") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CAPTURE(seed);
    RandomProblem p = make_problem(seed);
    LarsPath path = ivsel::lars_weighted_path(p.Z, p.y, p.w);
    check_path_shape(path);
    REQUIRE(path.warnings.empty());

    for (const auto& bp : path.breakpoints) check_kkt(p.Z, p.y, p.w, bp);

    std::vector<double> lambdas;
    for (std::size_t i = 0; i < path.breakpoints.size(); ++i) {
      lambdas.push_back(path.breakpoints[i].lambda);
      if (i + 1 < path.breakpoints.size())
        lambdas.push_back(0.5 * (path.breakpoints[i].lambda + path.breakpoints[i + 1].lambda));
    }
    for (double lambda : lambdas) {
      CAPTURE(lambda);
      Eigen::VectorXd from_path = ivsel::adaptive_lasso_at(path, lambda);
      Eigen::VectorXd from_cd = cd_lasso(p.Z, p.y, p.w, lambda);
      CHECK((from_path - from_cd).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("drop events occur and the path stays correct through them") {
  bool found_drop = false;
  for (std::uint64_t seed = 100; seed < 140 && !found_drop; ++seed) {
    RandomProblem p = make_problem(seed);
    LarsPath path = ivsel::lars_weighted_path(p.Z, p.y, p.w);
    for (const auto& bp : path.breakpoints) {
      if (bp.event != PathEvent::Drop) continue;
      found_drop = true;
      check_kkt(p.Z, p.y, p.w, bp);
      Eigen::VectorXd from_cd = cd_lasso(p.Z, p.y, p.w, bp.lambda);
      CHECK((bp.alpha - from_cd).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
  CHECK(found_drop);
}

TEST_CASE("orthogonal outcome produces an immediately terminal path") {
  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(4, 2);
  Z(0, 0) = 1.0;
  Z(1, 1) = 1.0;
  Eigen::VectorXd y = Eigen::VectorXd::Zero(4);
  y(3) = 5.0;
  Eigen::VectorXd w = Eigen::VectorXd::Ones(2);
  LarsPath path = ivsel::lars_weighted_path(Z, y, plain_weights(w));
  REQUIRE(path.breakpoints.size() == 1);
  CHECK(path.breakpoints[0].event == PathEvent::Terminal);
  CHECK(path.breakpoints[0].alpha.cwiseAbs().maxCoeff() == 0.0);
  CHECK(path.entry_order.empty());
}

TEST_CASE("single column reduces to the soft-threshold formula") {
  SplitStream stream(7, 0, RngBlock::Instruments);
  Eigen::MatrixXd Z(20, 1);
  Eigen::VectorXd y(20);
  for (int i = 0; i < 20; ++i) {
    Z(i, 0) = stream.normal();
    y(i) = 2.0 * Z(i, 0) + 0.3 * stream.normal();
  }
  Eigen::VectorXd w(1);
  w << 0.8;
  LarsPath path = ivsel::lars_weighted_path(Z, y, plain_weights(w));
  double zy = Z.col(0).dot(y);
  double zz = Z.col(0).squaredNorm();
  for (double lambda : {0.0, 0.3, 1.1, 2.7, std::abs(zy) / 0.8 + 1.0}) {
    double mag = std::abs(zy) - lambda * 0.8;
    double expected = mag > 0.0 ? (zy > 0 ? mag : -mag) / zz : 0.0;
    CHECK(path.coeffs_at(lambda)(0) == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("scaling all weights rescales the penalty axis and nothing else") {
  RandomProblem p = make_problem(55);
  LarsPath base = ivsel::lars_weighted_path(p.Z, p.y, p.w);
  AdaptiveWeights scaled = p.w;
  scaled.weights *= 3.0;
  LarsPath rescaled = ivsel::lars_weighted_path(p.Z, p.y, scaled);

  REQUIRE(base.breakpoints.size() == rescaled.breakpoints.size());
  CHECK(base.entry_order == rescaled.entry_order);
  for (std::size_t i = 0; i < base.breakpoints.size(); ++i) {
    const auto& a = base.breakpoints[i];
    const auto& b = rescaled.breakpoints[i];
    CHECK(a.event == b.event);
    CHECK(a.index == b.index);
    CHECK(b.lambda == doctest::Approx(a.lambda / 3.0).epsilon(1e-9));
    CHECK((a.alpha - b.alpha).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("weights from an initial estimate freeze exact zeros") {
  Eigen::VectorXd alpha_init(5);
  alpha_init << 0.5, 0.0, -0.25, 0.0, 2.0;
  AdaptiveWeights w = AdaptiveWeights::from_initial_alpha(alpha_init, 0.7);
  CHECK(w.nu == 0.7);
  CHECK(w.frozen_valid == std::vector<int>{1, 3});
  CHECK(w.frozen(1));
  CHECK(w.frozen(3));
  CHECK_FALSE(w.frozen(0));
  CHECK(w.weights(0) == doctest::Approx(std::pow(0.5, -0.7)).epsilon(1e-12));
  CHECK(w.weights(2) == doctest::Approx(std::pow(0.25, -0.7)).epsilon(1e-12));
  CHECK(w.weights(4) == doctest::Approx(std::pow(2.0, -0.7)).epsilon(1e-12));
  CHECK(std::isinf(w.weights(1)));
  CHECK_THROWS_AS(AdaptiveWeights::from_initial_alpha(alpha_init, -0.5), ValidationError);

  // Frozen instruments never activate no matter how much they explain.
  SplitStream stream(9, 0, RngBlock::Instruments);
  Eigen::MatrixXd Z(40, 5);
  for (int i = 0; i < 40; ++i)
    for (int j = 0; j < 5; ++j) Z(i, j) = stream.normal();
  Eigen::VectorXd y = 3.0 * Z.col(1) + Z.col(0);
  LarsPath path = ivsel::lars_weighted_path(Z, y, w);
  for (const auto& bp : path.breakpoints) {
    CHECK(bp.alpha(1) == 0.0);
    CHECK(bp.alpha(3) == 0.0);
  }
  for (int j : path.entry_order) {
    CHECK(j != 1);
    CHECK(j != 3);
  }
}

TEST_CASE("all-frozen weights terminate immediately") {
  Eigen::VectorXd alpha_init = Eigen::VectorXd::Zero(3);
  AdaptiveWeights w = AdaptiveWeights::from_initial_alpha(alpha_init);
  Eigen::MatrixXd Z = random_matrix(20, 3, 10, 0);
  Eigen::VectorXd y = Z.col(0);
  LarsPath path = ivsel::lars_weighted_path(Z, y, w);
  REQUIRE(path.breakpoints.size() == 1);
  CHECK(path.breakpoints[0].event == PathEvent::Terminal);
}

TEST_CASE("max_active truncates the path after that many entries") {
  RandomProblem p = make_problem(77);
  LarsPath path = ivsel::lars_weighted_path(p.Z, p.y, p.w, 1);
  CHECK(path.max_active == 1);
  REQUIRE(path.breakpoints.size() == 2);
  CHECK(path.breakpoints[0].event == PathEvent::Enter);
  CHECK(path.breakpoints[1].event == PathEvent::Terminal);
  int j = path.breakpoints[0].index;
  // The terminal point is the least-squares fit on the single active column.
  double expected = p.Z.col(j).dot(p.y) / p.Z.col(j).squaredNorm();
  CHECK(path.breakpoints[1].alpha(j) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("input validation for the path solver") {
  Eigen::MatrixXd Z = random_matrix(20, 3, 12, 0);
  Eigen::VectorXd y = random_matrix(21, 1, 12, 1).col(0);
  Eigen::VectorXd w = Eigen::VectorXd::Ones(3);
  CHECK_THROWS_AS(ivsel::lars_weighted_path(Z, y, plain_weights(w)), ValidationError);
  Eigen::VectorXd y_ok = y.head(20);
  Eigen::VectorXd w_short = Eigen::VectorXd::Ones(2);
  CHECK_THROWS_AS(ivsel::lars_weighted_path(Z, y_ok, plain_weights(w_short)), ValidationError);
  Eigen::VectorXd w_bad = w;
  w_bad(1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(ivsel::lars_weighted_path(Z, y_ok, plain_weights(w_bad)), ValidationError);
  w_bad(1) = 0.0;
  CHECK_THROWS_AS(ivsel::lars_weighted_path(Z, y_ok, plain_weights(w_bad)), ValidationError);
}

TEST_CASE("instrument columns are cleaned of the projected exposures") {
  ivsel::SimConfig config = ivsel::SimConfig::dense_design(500, 41);
  auto [data, truth] = ivsel::generate_dataset(config, 0);
  ivsel::FirstStage fs = ivsel::first_stage(data);
  Eigen::MatrixXd ztilde = ivsel::build_ztilde(data);
  REQUIRE(ztilde.cols() == data.kz());
  double scale = fs.x_hat.norm() * ztilde.norm();
  CHECK((fs.x_hat.transpose() * ztilde).cwiseAbs().maxCoeff() < 1e-9 * scale);

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(ztilde);
  int rank = 0;
  for (int i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()(i) > svd.singularValues()(0) * 1e-8) ++rank;
  CHECK(rank == data.kz() - data.kx());
}

TEST_CASE("exposure coefficients implied by a direct-effect vector") {
  ivsel::SimConfig config = ivsel::SimConfig::dense_design(800, 42);
  auto [data, truth] = ivsel::generate_dataset(config, 3);

  SUBCASE("zero direct effects give the all-valid fit") {
    ivsel::TwoSLSFit fit = ivsel::fit_2sls(data, {});
    Eigen::VectorXd beta = ivsel::beta_from_alpha(data, Eigen::VectorXd::Zero(data.kz()));
    CHECK((beta - fit.beta_hat).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("direct effects from a joint fit reproduce its exposure block") {
    // The joint normal equations profile down to exactly this substitution,
    // so feeding the fitted direct effects back must return the fitted betas.
    ivsel::TwoSLSFit fit = ivsel::fit_2sls(data, truth.invalid_set);
    Eigen::VectorXd full_alpha = Eigen::VectorXd::Zero(data.kz());
    for (std::size_t i = 0; i < truth.invalid_set.size(); ++i)
      full_alpha(truth.invalid_set[i]) = fit.alpha_hat(static_cast<int>(i));
    Eigen::VectorXd beta = ivsel::beta_from_alpha(data, full_alpha);
    CHECK((beta - fit.beta_hat).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("length mismatch is rejected") {
    CHECK_THROWS_AS(ivsel::beta_from_alpha(data, Eigen::VectorXd::Zero(3)), ValidationError);
  }
}

TEST_CASE("noiseless direct effects recover the structural coefficients") {
  SplitStream stream(43, 0, RngBlock::Instruments);
  Eigen::MatrixXd Z(60, 5);
  for (int i = 0; i < 60; ++i)
    for (int j = 0; j < 5; ++j) Z(i, j) = stream.normal();
  Eigen::MatrixXd pi = random_matrix(5, 2, 43, 1);
  pi.array() += 1.5;
  Eigen::VectorXd beta(2);
  beta << 1.0, -0.5;
  Eigen::VectorXd alpha(5);
  alpha << 0.6, 0.0, 0.0, -0.4, 0.0;
  Dataset data;
  data.Z = Z;
  data.X = Z * pi;
  data.y = data.X * beta + Z * alpha;
  data.W.resize(60, 0);
  data.exposure_labels = {"x1", "x2"};
  data.instrument_labels = {"z1", "z2", "z3", "z4", "z5"};
  Eigen::VectorXd recovered = ivsel::beta_from_alpha(data, alpha);
  CHECK((recovered - beta).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("planted strong direct effects enter the path first") {
  Eigen::MatrixXd Z = random_matrix(500, 7, 44, 0);
  Eigen::MatrixXd pi = random_matrix(7, 2, 44, 1);
  pi.array() += 1.5;
  Eigen::VectorXd beta(2);
  beta << 1.0, 0.5;
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(7);
  alpha(0) = 0.8;
  alpha(1) = -0.6;
  Dataset data;
  data.Z = Z;
  data.X = Z * pi;
  data.y = data.X * beta + Z * alpha;
  SplitStream noise(44, 2, RngBlock::Errors);
  for (int i = 0; i < 500; ++i) {
    for (int q = 0; q < 2; ++q) data.X(i, q) += 0.3 * noise.normal();
    data.y(i) += 0.3 * noise.normal();
  }
  data.W.resize(500, 0);
  data.exposure_labels = {"x1", "x2"};
  data.instrument_labels = {"z1", "z2", "z3", "z4", "z5", "z6", "z7"};

  ivsel::JustIdentifiedTable table = ivsel::enumerate_just_identified(data);
  ivsel::MedianTreeEstimate est = ivsel::median_of_medians(table);
  Eigen::VectorXd alpha_init = ivsel::alpha_from_beta(data, est.beta_mm);
  AdaptiveWeights w = AdaptiveWeights::from_initial_alpha(alpha_init);
  Eigen::MatrixXd ztilde = ivsel::build_ztilde(data);
  LarsPath path = ivsel::lars_weighted_path(ztilde, data.y, w, data.kz() - data.kx());

  REQUIRE(path.entry_order.size() >= 2);
  std::vector<int> first_two = {path.entry_order[0], path.entry_order[1]};
  std::sort(first_two.begin(), first_two.end());
  CHECK(first_two == std::vector<int>{0, 1});
}
