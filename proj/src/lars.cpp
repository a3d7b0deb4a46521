#include "ivselect/lars.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ivselect/linalg.hpp"
#include "ivselect/two_sls.hpp"

namespace ivsel {

bool AdaptiveWeights::frozen(int j) const {
  return std::binary_search(frozen_valid.begin(), frozen_valid.end(), j);
}

AdaptiveWeights AdaptiveWeights::from_initial_alpha(const Eigen::VectorXd& alpha_init, double nu) {
  if (!(nu >= 0.0)) throw ValidationError("adaptive weights: nu must be >= 0");
  AdaptiveWeights w;
  w.nu = nu;
  w.weights.resize(alpha_init.size());
  for (int j = 0; j < alpha_init.size(); ++j) {
    double a = std::abs(alpha_init(j));
    if (a == 0.0) {
      w.frozen_valid.push_back(j);
      w.weights(j) = std::numeric_limits<double>::infinity();
    } else {
      w.weights(j) = std::pow(a, -nu);
    }
  }
  return w;
}

Eigen::MatrixXd build_ztilde(const Dataset& data) {
  FirstStage fs = first_stage(data);
  return annihilate(data.Z, fs.x_hat);
}

namespace {

constexpr double kTieRel = 1e-12;

struct Candidate {
  double lambda = -1.0;
  bool is_drop = false;
  int index = -1;
};

int numerical_rank(const Eigen::MatrixXd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) <= 0.0) return 0;
  int r = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv(i) > sv(0) * 1e-8) ++r;
  return r;
}

}  // namespace

LarsPath lars_weighted_path(const Eigen::MatrixXd& ztilde, const Eigen::VectorXd& y,
                            const AdaptiveWeights& weights, int max_active) {
  const int kz = static_cast<int>(ztilde.cols());
  if (ztilde.rows() != y.size()) throw ValidationError("lars: row count mismatch");
  if (weights.weights.size() != kz) throw ValidationError("lars: weight length mismatch");
  for (int j = 0; j < kz; ++j)
    if (!weights.frozen(j) && !(weights.weights(j) > 0.0 && std::isfinite(weights.weights(j))))
      throw ValidationError("lars: weights must be positive and finite unless frozen");
  if (max_active < 0) max_active = numerical_rank(ztilde);
  max_active = std::min(max_active, kz);

  LarsPath path;
  path.kz = kz;
  path.max_active = max_active;

  // Scaled problem: column j divided by its weight turns the weighted penalty
  // into a plain l1 penalty; coefficients scale back by the same factor.
  Eigen::MatrixXd b_mat = Eigen::MatrixXd::Zero(ztilde.rows(), kz);
  for (int j = 0; j < kz; ++j)
    if (!weights.frozen(j)) b_mat.col(j) = ztilde.col(j) / weights.weights(j);
  Eigen::MatrixXd gram = b_mat.transpose() * b_mat;
  Eigen::VectorXd bty = b_mat.transpose() * y;

  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(kz);
  std::vector<int> active;
  std::vector<bool> is_active(static_cast<std::size_t>(kz), false);
  std::vector<bool> ever_entered(static_cast<std::size_t>(kz), false);

  auto unscale = [&](const Eigen::VectorXd& g) {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(kz);
    for (int j = 0; j < kz; ++j)
      if (!weights.frozen(j) && g(j) != 0.0) a(j) = g(j) / weights.weights(j);
    return a;
  };
  auto sorted_active = [&]() {
    std::vector<int> s(active);
    std::sort(s.begin(), s.end());
    return s;
  };
  auto push_breakpoint = [&](double lambda, PathEvent ev, int index) {
    path.breakpoints.push_back({lambda, ev, index, sorted_active(), unscale(gamma)});
  };

  double col_scale = 0.0;
  for (int j = 0; j < kz; ++j) col_scale = std::max(col_scale, b_mat.col(j).norm());
  const double eps_zero = 1e-12 * std::max(1.0, y.norm() * col_scale);

  double lambda_first = 0.0;
  for (int j = 0; j < kz; ++j)
    if (!weights.frozen(j)) lambda_first = std::max(lambda_first, std::abs(bty(j)));
  if (max_active == 0 || lambda_first <= eps_zero) {
    push_breakpoint(0.0, PathEvent::Terminal, -1);
    return path;
  }
  const double eps_stop = 1e-13 * lambda_first;

  Eigen::VectorXd c = bty;
  double lambda_k = std::numeric_limits<double>::infinity();
  Eigen::VectorXd dir;  // direction for the current active set

  auto solve_direction = [&](const Eigen::VectorXd& rhs) -> bool {
    const int m = static_cast<int>(active.size());
    Eigen::MatrixXd gaa(m, m);
    for (int r = 0; r < m; ++r)
      for (int s = 0; s < m; ++s) gaa(r, s) = gram(active[r], active[s]);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gaa);
    if (ldlt.info() != Eigen::Success) return false;
    dir = ldlt.solve(rhs);
    return dir.allFinite();
  };

  auto finish_at_zero = [&]() {
    // Linear continuation of the current segment down to lambda = 0, which is
    // the least-squares fit on the final active set.
    if (!active.empty()) {
      Eigen::VectorXd ba(active.size());
      for (std::size_t r = 0; r < active.size(); ++r) ba(r) = bty(active[r]);
      if (solve_direction(ba)) {
        for (std::size_t r = 0; r < active.size(); ++r) gamma(active[r]) = dir(r);
      } else {
        path.warnings.push_back("active Gram solve failed at path end; coefficients frozen");
      }
    }
    push_breakpoint(0.0, PathEvent::Terminal, -1);
  };

  while (true) {
    const bool empty = active.empty();
    Eigen::VectorXd a_coef = Eigen::VectorXd::Zero(kz);
    Eigen::VectorXd sign_a;
    if (!empty) {
      sign_a.resize(active.size());
      for (std::size_t r = 0; r < active.size(); ++r) {
        double g = gamma(active[r]);
        sign_a(r) = (g != 0.0) ? (g > 0 ? 1.0 : -1.0) : (c(active[r]) >= 0 ? 1.0 : -1.0);
      }
      if (!solve_direction(sign_a)) {
        path.warnings.push_back("active Gram solve failed; path truncated");
        push_breakpoint(0.0, PathEvent::Terminal, -1);
        return path;
      }
      for (int j = 0; j < kz; ++j) {
        if (weights.frozen(j)) continue;
        double s = 0.0;
        for (std::size_t r = 0; r < active.size(); ++r) s += gram(j, active[r]) * dir(r);
        a_coef(j) = s;
      }
    }

    const double lambda_cap =
        std::isfinite(lambda_k) ? lambda_k * (1.0 - kTieRel) : std::numeric_limits<double>::max();

    // Gather the next event: largest admissible lambda below the current one.
    std::vector<Candidate> entries;
    Candidate best_drop;
    if (!empty) {
      for (std::size_t r = 0; r < active.size(); ++r) {
        double d = dir(r);
        if (d == 0.0) continue;
        double g = gamma(active[r]);
        double lam = lambda_k + g / d;
        if (!(lam > eps_stop) || !(lam <= lambda_cap)) continue;
        if (lam > best_drop.lambda ||
            (lam > best_drop.lambda * (1.0 - kTieRel) && active[r] < best_drop.index))
          best_drop = {lam, true, active[r]};
      }
    }
    for (int j = 0; j < kz; ++j) {
      if (weights.frozen(j) || is_active[static_cast<std::size_t>(j)]) continue;
      if (empty) {
        double lam = std::abs(c(j));
        if (lam > eps_stop && lam <= lambda_cap) entries.push_back({lam, false, j});
        continue;
      }
      double denom_p = 1.0 - a_coef(j);
      double denom_m = 1.0 + a_coef(j);
      if (std::abs(denom_p) > 1e-14) {
        double lam = (c(j) - lambda_k * a_coef(j)) / denom_p;
        if (lam > eps_stop && lam <= lambda_cap) entries.push_back({lam, false, j});
      }
      if (std::abs(denom_m) > 1e-14) {
        double lam = (lambda_k * a_coef(j) - c(j)) / denom_m;
        if (lam > eps_stop && lam <= lambda_cap) entries.push_back({lam, false, j});
      }
    }

    Candidate best_entry;
    int near_ties = 0;
    for (const auto& e : entries)
      if (e.lambda > best_entry.lambda) best_entry = e;
    if (best_entry.index >= 0) {
      for (const auto& e : entries) {
        if (e.lambda >= best_entry.lambda * (1.0 - kTieRel)) {
          ++near_ties;
          if (e.index < best_entry.index) best_entry = e;  // deterministic tie-break
        }
      }
      if (near_ties >= 3) {
        std::ostringstream os;
        os << "degenerate tie among " << near_ties << " entry candidates near lambda "
           << best_entry.lambda << "; lowest index chosen";
        path.warnings.push_back(os.str());
      }
    }

    bool have_entry = best_entry.index >= 0;
    bool have_drop = best_drop.index >= 0;
    if (!have_entry && !have_drop) {
      finish_at_zero();
      return path;
    }
    bool take_drop =
        have_drop && (!have_entry || best_drop.lambda >= best_entry.lambda * (1.0 - kTieRel));
    Candidate ev = take_drop ? best_drop : best_entry;

    // Advance coefficients to the event.
    if (!empty) {
      double step = (std::isfinite(lambda_k) ? lambda_k : ev.lambda) - ev.lambda;
      for (std::size_t r = 0; r < active.size(); ++r) gamma(active[r]) += step * dir(r);
    }
    lambda_k = ev.lambda;

    if (take_drop) {
      gamma(ev.index) = 0.0;
      is_active[static_cast<std::size_t>(ev.index)] = false;
      active.erase(std::find(active.begin(), active.end(), ev.index));
      c = bty - gram * gamma;
      push_breakpoint(lambda_k, PathEvent::Drop, ev.index);
    } else {
      c = bty - gram * gamma;
      active.push_back(ev.index);
      is_active[static_cast<std::size_t>(ev.index)] = true;
      if (!ever_entered[static_cast<std::size_t>(ev.index)]) {
        ever_entered[static_cast<std::size_t>(ev.index)] = true;
        path.entry_order.push_back(ev.index);
      }
      push_breakpoint(lambda_k, PathEvent::Enter, ev.index);
      if (static_cast<int>(active.size()) >= max_active) {
        finish_at_zero();
        return path;
      }
    }
  }
}

Eigen::VectorXd LarsPath::coeffs_at(double lambda) const {
  if (!(lambda >= 0.0)) throw ValidationError("path evaluation requires lambda >= 0");
  if (breakpoints.empty()) throw ValidationError("empty path");
  const auto& first = breakpoints.front();
  if (lambda >= first.lambda)
    return (lambda == first.lambda) ? first.alpha : Eigen::VectorXd::Zero(kz);
  for (std::size_t i = 0; i + 1 < breakpoints.size(); ++i) {
    const auto& hi = breakpoints[i];
    const auto& lo = breakpoints[i + 1];
    if (lambda > lo.lambda) {
      double t = (hi.lambda - lambda) / (hi.lambda - lo.lambda);
      return hi.alpha + t * (lo.alpha - hi.alpha);
    }
    if (lambda == lo.lambda) return lo.alpha;
  }
  return breakpoints.back().alpha;
}

Eigen::VectorXd adaptive_lasso_at(const LarsPath& path, double lambda) {
  return path.coeffs_at(lambda);
}

Eigen::VectorXd beta_from_alpha(const Dataset& data, const Eigen::VectorXd& alpha) {
  if (alpha.size() != data.kz())
    throw ValidationError("beta_from_alpha: alpha length must match instrument count");
  FirstStage fs = first_stage(data);
  return lstsq(fs.x_hat, data.y - data.Z * alpha);
}

}  // namespace ivsel
