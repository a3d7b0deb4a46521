#include "ivselect/simulate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "ivselect/lars.hpp"
#include "ivselect/linalg.hpp"
#include "ivselect/median_tree.hpp"
#include "ivselect/rng.hpp"
#include "ivselect/selection.hpp"
#include "ivselect/two_sls.hpp"

namespace ivsel {

void SimConfig::validate() const {
  if (n < 1) throw ValidationError("sim config: n must be positive");
  if (kx < 1 || kz < kx) throw ValidationError("sim config: need kz >= kx >= 1");
  if (n <= kx + kz) throw ValidationError("sim config: need n > kx + kz");
  if (beta.size() != kx) throw ValidationError("sim config: beta must have kx entries");
  if (alpha.size() != kz) throw ValidationError("sim config: alpha must have kz entries");
  if (rho.size() != kx) throw ValidationError("sim config: rho must have kx entries");
  double rho_ss = 0.0;
  for (int q = 0; q < kx; ++q) {
    if (!(std::abs(rho(q)) < 1.0)) throw ValidationError("sim config: |rho| must be < 1");
    rho_ss += rho(q) * rho(q);
  }
  if (!(rho_ss < 1.0))
    throw ValidationError("sim config: error correlation matrix not positive definite");
  if (!(std::abs(sigma_z_decay) < 1.0))
    throw ValidationError("sim config: |sigma_z_decay| must be < 1");
  if (!(error_scale >= 0.0)) throw ValidationError("sim config: error_scale must be >= 0");
  if (static_cast<int>(pi.size()) != kx)
    throw ValidationError("sim config: one pi segment per exposure required");
  for (const auto& seg : pi) {
    if (seg.offset < 0 || seg.len < 1 || seg.offset + seg.len > kz)
      throw ValidationError("sim config: pi segment out of range");
    if (!(seg.lo <= seg.hi)) throw ValidationError("sim config: pi segment bounds reversed");
  }
}

BlockStructure SimConfig::block_structure() const {
  BlockStructure b;
  b.relevance.resize(static_cast<std::size_t>(kz));
  for (int q = 0; q < kx; ++q) {
    const auto& seg = pi[static_cast<std::size_t>(q)];
    for (int j = seg.offset; j < seg.offset + seg.len; ++j)
      b.relevance[static_cast<std::size_t>(j)].push_back(q);
  }
  b.validate(kx, kz);
  return b;
}

SimConfig SimConfig::dense_design(int n, std::uint64_t seed) {
  SimConfig c;
  c.n = n;
  c.kz = 21;
  c.kx = 2;
  c.beta = Eigen::Vector2d(0.3, 0.6);
  c.alpha = Eigen::VectorXd::Zero(21);
  c.alpha.head(9).setConstant(0.4);
  c.rho = Eigen::Vector2d(0.25, 0.3);
  c.sigma_z_decay = 0.5;
  c.pi = {{0, 21, 1.5, 2.5}, {0, 21, 1.5, 2.5}};
  c.seed = seed;
  return c;
}

SimConfig SimConfig::block_design(int n, std::uint64_t seed) {
  SimConfig c;
  c.n = n;
  c.kz = 21;
  c.kx = 2;
  c.beta = Eigen::Vector2d(0.3, 0.6);
  c.alpha = Eigen::VectorXd::Zero(21);
  c.alpha.head(4).setOnes();
  c.alpha.segment(10, 5).setOnes();
  c.rho = Eigen::Vector2d(0.25, 0.3);
  c.sigma_z_decay = 0.5;
  c.pi = {{0, 10, 1.5, 2.5}, {10, 11, 1.5, 2.5}};
  c.seed = seed;
  return c;
}

std::pair<Dataset, TruthInfo> generate_dataset(const SimConfig& config, int rep) {
  config.validate();
  const int n = config.n;
  const int kz = config.kz;
  const int kx = config.kx;

  SplitStream z_stream(config.seed, static_cast<std::uint64_t>(rep), RngBlock::Instruments);
  Eigen::MatrixXd g(n, kz);
  for (int j = 0; j < kz; ++j)
    for (int i = 0; i < n; ++i) g(i, j) = z_stream.normal();
  Eigen::MatrixXd z;
  if (config.sigma_z_decay == 0.0) {
    z = std::move(g);
  } else {
    Eigen::MatrixXd sigma_z(kz, kz);
    for (int j = 0; j < kz; ++j)
      for (int k = 0; k < kz; ++k)
        sigma_z(j, k) = std::pow(config.sigma_z_decay, std::abs(j - k));
    Eigen::LLT<Eigen::MatrixXd> llt(sigma_z);
    if (llt.info() != Eigen::Success)
      throw ValidationError("sim config: instrument covariance not positive definite");
    z = g * llt.matrixL().transpose();
  }

  Eigen::MatrixXd errors = Eigen::MatrixXd::Zero(n, kx + 1);
  if (config.error_scale > 0.0) {
    Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(kx + 1, kx + 1);
    for (int q = 0; q < kx; ++q) {
      cov(0, q + 1) = config.rho(q);
      cov(q + 1, 0) = config.rho(q);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success)
      throw ValidationError("sim config: error correlation matrix not positive definite");
    SplitStream e_stream(config.seed, static_cast<std::uint64_t>(rep), RngBlock::Errors);
    Eigen::MatrixXd ge(n, kx + 1);
    for (int j = 0; j < kx + 1; ++j)
      for (int i = 0; i < n; ++i) ge(i, j) = e_stream.normal();
    errors = config.error_scale * (ge * llt.matrixL().transpose());
  }

  std::uint64_t pi_rep = config.fix_pi ? 0 : static_cast<std::uint64_t>(rep);
  SplitStream pi_stream(config.seed, pi_rep, RngBlock::FirstStagePi);
  Eigen::MatrixXd pi = Eigen::MatrixXd::Zero(kz, kx);
  for (int q = 0; q < kx; ++q) {
    const auto& seg = config.pi[static_cast<std::size_t>(q)];
    for (int j = seg.offset; j < seg.offset + seg.len; ++j)
      pi(j, q) = pi_stream.uniform(seg.lo, seg.hi);
  }

  Dataset d;
  d.X.resize(n, kx);
  for (int q = 0; q < kx; ++q) d.X.col(q) = z * pi.col(q) + errors.col(q + 1);
  d.y = d.X * config.beta + z * config.alpha + errors.col(0);
  d.Z = std::move(z);
  d.W.resize(n, 0);
  d.exposure_labels.reserve(static_cast<std::size_t>(kx));
  for (int q = 0; q < kx; ++q) d.exposure_labels.push_back("x" + std::to_string(q + 1));
  d.instrument_labels.reserve(static_cast<std::size_t>(kz));
  for (int j = 0; j < kz; ++j) d.instrument_labels.push_back("z" + std::to_string(j + 1));
  d.validate();

  return {std::move(d), TruthInfo::from_coefficients(config.beta, config.alpha)};
}

std::string estimator_name(Estimator e) {
  switch (e) {
    case Estimator::Oracle2sls: return "oracle_2sls";
    case Estimator::Naive2sls: return "naive_2sls";
    case Estimator::Mm: return "mm";
    case Estimator::MmBlock: return "mm_block";
    case Estimator::AlassoCv: return "alasso_cv";
    case Estimator::PostAlassoCv: return "post_alasso_cv";
    case Estimator::AlassoCvse: return "alasso_cvse";
    case Estimator::PostAlassoCvse: return "post_alasso_cvse";
    case Estimator::PostAlassoSargan: return "post_alasso_sargan";
    case Estimator::PostAlassoSarganBlock: return "post_alasso_sargan_block";
  }
  return "unknown";
}

std::optional<Estimator> estimator_from_name(const std::string& name) {
  static const std::vector<Estimator> all = {
      Estimator::Oracle2sls,     Estimator::Naive2sls,      Estimator::Mm,
      Estimator::MmBlock,        Estimator::AlassoCv,       Estimator::PostAlassoCv,
      Estimator::AlassoCvse,     Estimator::PostAlassoCvse, Estimator::PostAlassoSargan,
      Estimator::PostAlassoSarganBlock};
  for (Estimator e : all)
    if (estimator_name(e) == name) return e;
  return std::nullopt;
}

std::vector<Estimator> dense_design_estimators() {
  return {Estimator::Oracle2sls,     Estimator::Naive2sls,      Estimator::Mm,
          Estimator::AlassoCv,       Estimator::PostAlassoCv,   Estimator::AlassoCvse,
          Estimator::PostAlassoCvse, Estimator::PostAlassoSargan};
}

std::vector<Estimator> block_design_estimators() {
  return {Estimator::Oracle2sls,       Estimator::Naive2sls, Estimator::Mm,
          Estimator::PostAlassoSargan, Estimator::MmBlock,   Estimator::PostAlassoSarganBlock};
}

namespace {

struct Cell {
  bool ok = false;
  Eigen::VectorXd beta;
  std::vector<int> selection;
  bool has_selection = false;
  std::string error;
};

// Shared per-replication work: every estimator sees the same dataset and the
// expensive intermediates are computed at most once.
class RepContext {
 public:
  RepContext(const SimConfig& config, int rep, const StudyOptions& options)
      : config_(config), rep_(rep), options_(options) {
    auto [d, t] = generate_dataset(config, rep);
    data_ = partial_out_covariates(d);
    truth_ = std::move(t);
  }

  const Dataset& data() const { return data_; }
  const TruthInfo& truth() const { return truth_; }

  const JustIdentifiedTable& table() {
    if (!table_) table_ = enumerate_just_identified(data_);
    return *table_;
  }
  const MedianTreeEstimate& mm() {
    if (!mm_) mm_ = median_of_medians(table());
    return *mm_;
  }
  const BlockStructure& blocks() {
    if (!blocks_) blocks_ = config_.block_structure();
    return *blocks_;
  }
  const MedianTreeEstimate& mm_block() {
    if (!mm_block_) {
      const BlockStructure& b = blocks();
      if (!block_table_) block_table_ = enumerate_just_identified(data_, &b);
      mm_block_ = block_median_of_medians(*block_table_, b);
    }
    return *mm_block_;
  }
  const Eigen::MatrixXd& ztilde() {
    if (!ztilde_) ztilde_ = build_ztilde(data_);
    return *ztilde_;
  }
  const LarsPath& path() {
    if (!path_) {
      AdaptiveWeights w = AdaptiveWeights::from_initial_alpha(
          alpha_from_beta(data_, mm().beta_mm), 1.0);
      path_ = lars_weighted_path(ztilde(), data_.y, w, data_.kz() - data_.kx());
    }
    return *path_;
  }
  const LarsPath& path_block() {
    if (!path_block_) {
      AdaptiveWeights w = AdaptiveWeights::from_initial_alpha(
          alpha_from_beta(data_, mm_block().beta_mm), 1.0);
      path_block_ = lars_weighted_path(ztilde(), data_.y, w, data_.kz() - data_.kx());
    }
    return *path_block_;
  }
  const std::pair<SelectionResult, SelectionResult>& cv() {
    if (!cv_) {
      AdaptiveWeights w = AdaptiveWeights::from_initial_alpha(
          alpha_from_beta(data_, mm().beta_mm), 1.0);
      std::uint64_t cv_seed =
          SplitStream(config_.seed, static_cast<std::uint64_t>(rep_), RngBlock::SeedDerivation)
              .next_u64();
      cv_ = cv_select_both(data_, w, options_.cv_folds, cv_seed);
    }
    return *cv_;
  }

 private:
  const SimConfig& config_;
  int rep_;
  StudyOptions options_;
  Dataset data_;
  TruthInfo truth_;
  std::optional<JustIdentifiedTable> table_, block_table_;
  std::optional<MedianTreeEstimate> mm_, mm_block_;
  std::optional<BlockStructure> blocks_;
  std::optional<Eigen::MatrixXd> ztilde_;
  std::optional<LarsPath> path_, path_block_;
  std::optional<std::pair<SelectionResult, SelectionResult>> cv_;
};

Cell evaluate(RepContext& ctx, Estimator e) {
  Cell cell;
  switch (e) {
    case Estimator::Oracle2sls: {
      TwoSLSFit fit = fit_2sls(ctx.data(), ctx.truth().invalid_set);
      cell.beta = fit.beta_hat;
      cell.selection = ctx.truth().invalid_set;
      cell.has_selection = true;
      break;
    }
    case Estimator::Naive2sls: {
      TwoSLSFit fit = fit_2sls(ctx.data(), {});
      cell.beta = fit.beta_hat;
      cell.has_selection = true;
      break;
    }
    case Estimator::Mm:
      cell.beta = ctx.mm().beta_mm;
      break;
    case Estimator::MmBlock:
      cell.beta = ctx.mm_block().beta_mm;
      break;
    case Estimator::AlassoCv:
    case Estimator::AlassoCvse: {
      const SelectionResult& sel = e == Estimator::AlassoCv ? ctx.cv().first : ctx.cv().second;
      Eigen::VectorXd alpha = ctx.path().coeffs_at(sel.lambda);
      cell.beta = beta_from_alpha(ctx.data(), alpha);
      cell.selection = sel.invalid_set;
      cell.has_selection = true;
      break;
    }
    case Estimator::PostAlassoCv:
    case Estimator::PostAlassoCvse: {
      const SelectionResult& sel = e == Estimator::PostAlassoCv ? ctx.cv().first : ctx.cv().second;
      cell.beta = sel.post_fit.beta_hat;
      cell.selection = sel.invalid_set;
      cell.has_selection = true;
      break;
    }
    case Estimator::PostAlassoSargan: {
      SelectionResult sel =
          downward_testing(ctx.data(), ctx.path(), default_p_threshold(ctx.data().n()));
      cell.beta = sel.post_fit.beta_hat;
      cell.selection = std::move(sel.invalid_set);
      cell.has_selection = true;
      break;
    }
    case Estimator::PostAlassoSarganBlock: {
      SelectionResult sel =
          downward_testing(ctx.data(), ctx.path_block(), default_p_threshold(ctx.data().n()));
      cell.beta = sel.post_fit.beta_hat;
      cell.selection = std::move(sel.invalid_set);
      cell.has_selection = true;
      break;
    }
  }
  cell.ok = true;
  return cell;
}

double sample_sd(const std::vector<double>& v, bool population) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(population ? v.size() : v.size() - 1));
}

}  // namespace

StudyResult run_study(const SimConfig& config, int reps, const std::vector<Estimator>& estimators,
                      const StudyOptions& options) {
  config.validate();
  if (reps < 1) throw ValidationError("run_study: reps must be positive");
  if (estimators.empty()) throw ValidationError("run_study: no estimators requested");
  if (options.workers < 1) throw ValidationError("run_study: workers must be positive");

  const std::size_t ne = estimators.size();
  std::vector<std::vector<Cell>> cells(static_cast<std::size_t>(reps), std::vector<Cell>(ne));

  auto run_rep = [&](int rep) {
    RepContext ctx(config, rep, options);
    for (std::size_t ei = 0; ei < ne; ++ei) {
      try {
        cells[static_cast<std::size_t>(rep)][ei] = evaluate(ctx, estimators[ei]);
      } catch (const std::exception& ex) {
        cells[static_cast<std::size_t>(rep)][ei].error = ex.what();
      }
    }
  };

  const int workers = std::min(options.workers, reps);
  if (workers <= 1) {
    for (int rep = 0; rep < reps; ++rep) run_rep(rep);
  } else {
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&]() {
      while (true) {
        int rep = next.fetch_add(1);
        if (rep >= reps) return;
        try {
          run_rep(rep);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  const TruthInfo truth = TruthInfo::from_coefficients(config.beta, config.alpha);

  StudyResult out;
  out.order = estimators;
  for (std::size_t ei = 0; ei < ne; ++ei) {
    StudyMetrics m;
    std::vector<const Cell*> ok;
    ok.reserve(static_cast<std::size_t>(reps));
    std::string first_error;
    for (int rep = 0; rep < reps; ++rep) {
      const Cell& c = cells[static_cast<std::size_t>(rep)][ei];
      if (c.ok)
        ok.push_back(&c);
      else if (first_error.empty())
        first_error = c.error;
    }
    m.failures = reps - static_cast<int>(ok.size());
    if (m.failures * 100 >= reps) {
      std::ostringstream msg;
      msg << estimator_name(estimators[ei]) << " failed on " << m.failures << "/" << reps
          << " replications; first error: " << first_error;
      throw NumericError(msg.str());
    }
    m.reps = static_cast<int>(ok.size());

    double mae_sum = 0.0, sd_sum = 0.0;
    std::vector<double> abs_err(ok.size()), vals(ok.size());
    for (int q = 0; q < config.kx; ++q) {
      for (std::size_t i = 0; i < ok.size(); ++i) {
        vals[i] = ok[i]->beta(q);
        abs_err[i] = std::abs(vals[i] - config.beta(q));
      }
      mae_sum += median_of(abs_err);
      sd_sum += sample_sd(vals, options.sd_population);
    }
    m.mae = mae_sum / config.kx;
    m.sd = sd_sum / config.kx;

    m.has_selection = !ok.empty() && ok.front()->has_selection;
    if (m.has_selection) {
      double count = 0.0, all_in = 0.0, oracle = 0.0;
      for (const Cell* c : ok) {
        count += static_cast<double>(c->selection.size());
        bool contains = std::includes(c->selection.begin(), c->selection.end(),
                                      truth.invalid_set.begin(), truth.invalid_set.end());
        all_in += contains ? 1.0 : 0.0;
        oracle += (c->selection == truth.invalid_set) ? 1.0 : 0.0;
      }
      m.mean_invalid = count / static_cast<double>(ok.size());
      m.freq_all_invalid = all_in / static_cast<double>(ok.size());
      m.freq_oracle = oracle / static_cast<double>(ok.size());
    }
    out.metrics.emplace(estimators[ei], std::move(m));
  }
  return out;
}

}  // namespace ivsel
