#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "ivselect/errors.hpp"

namespace ivsel {

// One estimation sample. X holds the exposures, Z the candidate instruments,
// W any exogenous covariates still to be partialled out.
struct Dataset {
  Eigen::VectorXd y;
  Eigen::MatrixXd X;
  Eigen::MatrixXd Z;
  Eigen::MatrixXd W;
  std::vector<std::string> exposure_labels;
  std::vector<std::string> instrument_labels;

  int n() const { return static_cast<int>(y.size()); }
  int kx() const { return static_cast<int>(X.cols()); }
  int kz() const { return static_cast<int>(Z.cols()); }
  int kw() const { return static_cast<int>(W.cols()); }

  // Shape and content checks that every dataset must pass: consistent row
  // counts, finite entries, unique labels, kx >= 1, kz >= kx.
  void validate_structure() const;

  // validate_structure plus the estimation requirement n > kx + kz + kw.
  // Parsing accepts short files; estimation entry points enforce this.
  void validate() const;
};

struct ColumnRoles {
  std::string outcome;
  std::vector<std::string> exposures;
  std::vector<std::string> instruments;
  std::vector<std::string> covariates;
};

// Reads a numeric CSV with a header row and assigns columns to roles.
// Rejects missing columns, duplicate role assignments, non-numeric cells,
// and NaN/Inf values. There is no missing-data handling by design.
Dataset load_csv(const std::string& path, const ColumnRoles& roles);

// Residualizes y, X, Z on [W, intercept] and returns the dataset with W
// emptied. The intercept is always included, so the result is mean-centered.
Dataset partial_out_covariates(const Dataset& data);

// Which exposures each instrument can move. Used to restrict the
// just-identified enumeration and the block median estimator.
struct BlockStructure {
  // relevance[j] = sorted exposure indices instrument j is relevant for.
  std::vector<std::vector<int>> relevance;

  bool relevant_for(int instrument, int exposure) const;
  // True when the union of the pair's relevance covers every exposure.
  bool pair_covers_all(int j, int l, int kx) const;
  void validate(int kx, int kz) const;

  static BlockStructure all_relevant(int kx, int kz);
  // JSON object mapping instrument label -> list of exposure labels.
  static BlockStructure from_json_file(const std::string& path,
                                       const std::vector<std::string>& instrument_labels,
                                       const std::vector<std::string>& exposure_labels);
};

// Ground truth carried alongside simulated datasets.
struct TruthInfo {
  Eigen::VectorXd beta_true;
  Eigen::VectorXd alpha_true;
  std::vector<int> valid_set;    // alpha_j == 0
  std::vector<int> invalid_set;  // alpha_j != 0

  static TruthInfo from_coefficients(const Eigen::VectorXd& beta, const Eigen::VectorXd& alpha);
};

}  // namespace ivsel
