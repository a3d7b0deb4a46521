#include "ivselect/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ivselect/linalg.hpp"
#include "ivselect/rng.hpp"

namespace ivsel {

std::string selection_method_name(SelectionMethod m) {
  switch (m) {
    case SelectionMethod::SarganDt: return "sargan_dt";
    case SelectionMethod::CvMin: return "cv_min";
    case SelectionMethod::CvOneSe: return "cv_1se";
    case SelectionMethod::ExhaustiveDt: return "exhaustive_dt";
  }
  return "unknown";
}

double default_p_threshold(int n) {
  if (n < 2) throw ValidationError("p-threshold rule needs n >= 2");
  return 0.1 / std::log(static_cast<double>(n));
}

namespace {

std::vector<int> complement_of(const std::vector<int>& subset, int kz) {
  std::vector<int> out;
  out.reserve(kz - subset.size());
  for (int j = 0; j < kz; ++j)
    if (!std::binary_search(subset.begin(), subset.end(), j)) out.push_back(j);
  return out;
}

std::size_t binom_clamped(int n, int k, std::size_t clamp) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  std::size_t r = 1;
  for (int i = 1; i <= k; ++i) {
    double next = static_cast<double>(r) * (n - k + i) / i;
    if (next > static_cast<double>(clamp)) return clamp + 1;
    r = r * static_cast<std::size_t>(n - k + i) / static_cast<std::size_t>(i);
  }
  return r;
}

bool next_combination(std::vector<int>& c, int kz) {
  int k = static_cast<int>(c.size());
  for (int i = k - 1; i >= 0; --i) {
    if (c[i] < kz - k + i) {
      ++c[i];
      for (int j = i + 1; j < k; ++j) c[j] = c[j - 1] + 1;
      return true;
    }
  }
  return false;
}

}  // namespace

SelectionResult downward_testing(const Dataset& data, const LarsPath& path, double p_threshold) {
  if (!(p_threshold > 0.0 && p_threshold < 1.0))
    throw ValidationError("p_threshold must lie in (0, 1)");
  if (path.kz != data.kz()) throw ValidationError("path does not match dataset");

  const int kmax = data.kz() - data.kx();
  const int limit = std::min<int>(kmax, static_cast<int>(path.entry_order.size()));

  SelectionResult result;
  result.method = SelectionMethod::SarganDt;
  result.p_threshold = p_threshold;

  bool have_fallback = false;
  SelectionResult fallback;

  for (int k = 0; k <= limit; ++k) {
    std::vector<int> cand(path.entry_order.begin(), path.entry_order.begin() + k);
    std::sort(cand.begin(), cand.end());
    TwoSLSFit fit;
    try {
      fit = fit_2sls(data, cand);
    } catch (const NumericError& e) {
      result.diagnostics.push_back("size " + std::to_string(k) + " candidate failed: " + e.what());
      continue;
    }
    SarganResult s = sargan(fit, data);
    if (s.p_value > p_threshold) {
      result.invalid_set = fit.invalid_set;
      result.valid_set = complement_of(fit.invalid_set, data.kz());
      result.post_fit = std::move(fit);
      result.sargan_result = s;
      result.path_step = k;
      if (s.df == 0)
        result.warnings.push_back(
            "no overidentified candidate accepted; returning the just-identified model");
      return result;
    }
    fallback.invalid_set = fit.invalid_set;
    fallback.valid_set = complement_of(fit.invalid_set, data.kz());
    fallback.post_fit = std::move(fit);
    fallback.sargan_result = s;
    fallback.path_step = k;
    have_fallback = true;
  }

  if (!have_fallback)
    throw NumericError("downward testing: no candidate model could be fitted");
  fallback.method = result.method;
  fallback.p_threshold = p_threshold;
  fallback.diagnostics = std::move(result.diagnostics);
  fallback.warnings.push_back(
      "path exhausted before an accepted model; returning the largest tested candidate");
  return fallback;
}

SelectionResult exhaustive_downward_testing(const Dataset& data, std::size_t cap,
                                            double p_threshold) {
  if (p_threshold <= 0.0) p_threshold = default_p_threshold(data.n());
  if (!(p_threshold < 1.0)) throw ValidationError("p_threshold must lie in (0, 1)");

  const int kz = data.kz();
  const int kmax = kz - data.kx();
  std::size_t total = 0;
  for (int k = 0; k <= kmax; ++k) {
    total += binom_clamped(kz, k, cap);
    if (total > cap) {
      std::ostringstream msg;
      msg << "exhaustive search over all invalid sets up to size " << kmax << " exceeds cap "
          << cap;
      throw ValidationError(msg.str());
    }
  }

  SelectionResult result;
  result.method = SelectionMethod::ExhaustiveDt;
  result.p_threshold = p_threshold;

  for (int k = 0; k <= kmax; ++k) {
    bool found = false;
    double best_p = -1.0;
    TwoSLSFit best_fit;
    SarganResult best_s;
    std::vector<int> subset(static_cast<std::size_t>(k));
    std::iota(subset.begin(), subset.end(), 0);
    bool more = true;
    while (more) {
      try {
        TwoSLSFit fit = fit_2sls(data, subset);
        SarganResult s = sargan(fit, data);
        if (s.p_value > p_threshold && s.p_value > best_p) {
          best_p = s.p_value;
          best_fit = std::move(fit);
          best_s = s;
          found = true;
        }
      } catch (const NumericError& e) {
        result.diagnostics.push_back("candidate failed: " + std::string(e.what()));
      }
      more = k > 0 && next_combination(subset, kz);
    }
    if (found) {
      result.invalid_set = best_fit.invalid_set;
      result.valid_set = complement_of(best_fit.invalid_set, kz);
      result.post_fit = std::move(best_fit);
      result.sargan_result = best_s;
      result.path_step = k;
      if (best_s.df == 0)
        result.warnings.push_back(
            "no overidentified candidate accepted; returning a just-identified model");
      return result;
    }
  }
  throw NumericError("exhaustive downward testing: no candidate model could be fitted");
}

TwoSLSFit post_selection_2sls(const Dataset& data, std::vector<int> invalid_set) {
  return fit_2sls(data, std::move(invalid_set));
}

namespace {

struct CvCurves {
  std::vector<double> grid;  // descending
  std::vector<double> mean;
  std::vector<double> se;
  LarsPath full_path;
};

CvCurves cv_curves(const Dataset& data, const AdaptiveWeights& weights, int folds,
                   std::uint64_t seed) {
  if (folds < 2) throw ValidationError("cross-validation needs at least 2 folds");
  data.validate();
  const int n = data.n();
  const int kz = data.kz();
  const int kx = data.kx();

  CvCurves cv;
  cv.full_path = lars_weighted_path(build_ztilde(data), data.y, weights, kz - kx);
  for (const auto& bp : cv.full_path.breakpoints) {
    if (!cv.grid.empty() && bp.lambda >= cv.grid.back() * (1.0 - 1e-12)) continue;
    cv.grid.push_back(bp.lambda);
  }

  // Seeded shuffle, then balanced assignment by position.
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  SplitStream rng(seed, 0, RngBlock::CvFolds);
  for (int i = n - 1; i > 0; --i)
    std::swap(perm[static_cast<std::size_t>(i)],
              perm[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i + 1)))]);

  const std::size_t g = cv.grid.size();
  std::vector<std::vector<double>> crit(g, std::vector<double>(static_cast<std::size_t>(folds)));

  for (int f = 0; f < folds; ++f) {
    std::vector<int> test_rows, train_rows;
    for (int i = 0; i < n; ++i)
      (i % folds == f ? test_rows : train_rows).push_back(perm[static_cast<std::size_t>(i)]);
    const int nt = static_cast<int>(test_rows.size());
    const int ntr = static_cast<int>(train_rows.size());
    if (nt <= kz || ntr <= kx + kz) {
      std::ostringstream msg;
      msg << "fold " << f + 1 << " too small for a fit (test " << nt << ", train " << ntr << ")";
      throw NumericError(msg.str());
    }

    Dataset train;
    train.y.resize(ntr);
    train.X.resize(ntr, kx);
    train.Z.resize(ntr, kz);
    train.W.resize(ntr, 0);
    train.exposure_labels = data.exposure_labels;
    train.instrument_labels = data.instrument_labels;
    for (int i = 0; i < ntr; ++i) {
      train.y(i) = data.y(train_rows[static_cast<std::size_t>(i)]);
      train.X.row(i) = data.X.row(train_rows[static_cast<std::size_t>(i)]);
      train.Z.row(i) = data.Z.row(train_rows[static_cast<std::size_t>(i)]);
    }
    Eigen::VectorXd y_test(nt);
    Eigen::MatrixXd x_test(nt, kx), z_test(nt, kz);
    for (int i = 0; i < nt; ++i) {
      y_test(i) = data.y(test_rows[static_cast<std::size_t>(i)]);
      x_test.row(i) = data.X.row(test_rows[static_cast<std::size_t>(i)]);
      z_test.row(i) = data.Z.row(test_rows[static_cast<std::size_t>(i)]);
    }

    LarsPath train_path = lars_weighted_path(build_ztilde(train), train.y, weights, kz - kx);
    FirstStage fs_train = first_stage(train);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr_test(z_test);
    Eigen::MatrixXd thin_q = qr_test.householderQ() * Eigen::MatrixXd::Identity(nt, kz);

    for (std::size_t gi = 0; gi < g; ++gi) {
      Eigen::VectorXd alpha = train_path.coeffs_at(cv.grid[gi]);
      Eigen::VectorXd beta = lstsq(fs_train.x_hat, train.y - train.Z * alpha);
      Eigen::VectorXd r = y_test - x_test * beta - z_test * alpha;
      double rtr = r.squaredNorm();
      crit[gi][static_cast<std::size_t>(f)] =
          rtr > 0.0 ? nt * (thin_q.transpose() * r).squaredNorm() / rtr : 0.0;
    }
  }

  cv.mean.resize(g);
  cv.se.resize(g);
  for (std::size_t gi = 0; gi < g; ++gi) {
    double m = std::accumulate(crit[gi].begin(), crit[gi].end(), 0.0) / folds;
    double ss = 0.0;
    for (double v : crit[gi]) ss += (v - m) * (v - m);
    cv.mean[gi] = m;
    cv.se[gi] = std::sqrt(ss / (folds - 1)) / std::sqrt(static_cast<double>(folds));
  }
  return cv;
}

SelectionResult cv_result_at(const Dataset& data, const CvCurves& cv, std::size_t idx,
                             SelectionMethod method) {
  SelectionResult res;
  res.method = method;
  res.lambda = cv.grid[idx];
  res.path_step = static_cast<int>(idx);
  Eigen::VectorXd alpha = cv.full_path.coeffs_at(res.lambda);
  for (int j = 0; j < data.kz(); ++j)
    if (alpha(j) != 0.0) res.invalid_set.push_back(j);
  res.valid_set = complement_of(res.invalid_set, data.kz());
  res.post_fit = fit_2sls(data, res.invalid_set);
  res.sargan_result = sargan(res.post_fit, data);
  res.warnings = cv.full_path.warnings;
  return res;
}

std::pair<std::size_t, std::size_t> cv_pick(const CvCurves& cv) {
  // Min rule; ties resolve to the larger penalty (earlier grid entry).
  std::size_t min_idx = 0;
  for (std::size_t gi = 1; gi < cv.grid.size(); ++gi)
    if (cv.mean[gi] < cv.mean[min_idx]) min_idx = gi;
  // One-standard-error rule: most penalized model within one se of the min.
  double cutoff = cv.mean[min_idx] + cv.se[min_idx];
  std::size_t se_idx = min_idx;
  for (std::size_t gi = 0; gi <= min_idx; ++gi) {
    if (cv.mean[gi] <= cutoff) {
      se_idx = gi;
      break;
    }
  }
  return {min_idx, se_idx};
}

}  // namespace

SelectionResult cv_select(const Dataset& data, const AdaptiveWeights& weights, int folds,
                          CvRule rule, std::uint64_t seed) {
  CvCurves cv = cv_curves(data, weights, folds, seed);
  auto [min_idx, se_idx] = cv_pick(cv);
  if (rule == CvRule::Min) return cv_result_at(data, cv, min_idx, SelectionMethod::CvMin);
  return cv_result_at(data, cv, se_idx, SelectionMethod::CvOneSe);
}

std::pair<SelectionResult, SelectionResult> cv_select_both(const Dataset& data,
                                                           const AdaptiveWeights& weights,
                                                           int folds, std::uint64_t seed) {
  CvCurves cv = cv_curves(data, weights, folds, seed);
  auto [min_idx, se_idx] = cv_pick(cv);
  return {cv_result_at(data, cv, min_idx, SelectionMethod::CvMin),
          cv_result_at(data, cv, se_idx, SelectionMethod::CvOneSe)};
}

}  // namespace ivsel
