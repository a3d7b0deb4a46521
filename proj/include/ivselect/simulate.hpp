#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ivselect/dataset.hpp"

namespace ivsel {

// Uniform draw for one exposure's first-stage coefficients over a contiguous
// run of instruments; everything outside the run is zero.
struct PiSegment {
  int offset = 0;
  int len = 0;
  double lo = 1.5;
  double hi = 2.5;
};

struct SimConfig {
  int n = 2000;
  int kz = 21;
  int kx = 2;
  Eigen::VectorXd beta;           // kx
  Eigen::VectorXd alpha;          // kz, direct effects of the invalid instruments
  Eigen::VectorXd rho;            // kx, corr(U, E_q); the E_q are mutually uncorrelated
  double sigma_z_decay = 0.5;     // cov(Z_j, Z_k) = decay^|j-k|
  std::vector<PiSegment> pi;      // one segment per exposure
  double error_scale = 1.0;       // 0 gives a noiseless design
  std::uint64_t seed = 1;
  bool fix_pi = false;            // reuse replication 0's first-stage draw everywhere

  void validate() const;
  BlockStructure block_structure() const;  // relevance = support of the pi segments

  static SimConfig dense_design(int n, std::uint64_t seed);  // 9 invalid, shared instruments
  static SimConfig block_design(int n, std::uint64_t seed);  // two non-overlapping blocks
};

// Deterministic in (config.seed, rep) regardless of call order.
std::pair<Dataset, TruthInfo> generate_dataset(const SimConfig& config, int rep);

enum class Estimator {
  Oracle2sls,
  Naive2sls,
  Mm,
  MmBlock,
  AlassoCv,
  PostAlassoCv,
  AlassoCvse,
  PostAlassoCvse,
  PostAlassoSargan,
  PostAlassoSarganBlock,
};

std::string estimator_name(Estimator e);
std::optional<Estimator> estimator_from_name(const std::string& name);

// Row order of the study report tables.
std::vector<Estimator> dense_design_estimators();
std::vector<Estimator> block_design_estimators();

struct StudyMetrics {
  double mae = 0.0;  // per-component median absolute error, averaged over exposures
  double sd = 0.0;   // per-component standard deviation, averaged over exposures
  double mean_invalid = 0.0;
  double freq_all_invalid = 0.0;  // true invalid set contained in the selection
  double freq_oracle = 0.0;       // selection equals the true invalid set
  bool has_selection = false;
  int reps = 0;
  int failures = 0;
};

struct StudyOptions {
  int workers = 1;
  int cv_folds = 10;
  bool sd_population = false;  // divisor reps instead of reps - 1
};

struct StudyResult {
  std::vector<Estimator> order;
  std::map<Estimator, StudyMetrics> metrics;
};

// Runs `reps` independent replications and aggregates. Results are identical
// for any worker count. Throws when any estimator fails on >= 1% of reps.
StudyResult run_study(const SimConfig& config, int reps, const std::vector<Estimator>& estimators,
                      const StudyOptions& options = {});

}  // namespace ivsel
