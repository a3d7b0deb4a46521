#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ivselect/dataset.hpp"
#include "ivselect/lars.hpp"
#include "ivselect/two_sls.hpp"

namespace ivsel {

enum class SelectionMethod { SarganDt, CvMin, CvOneSe, ExhaustiveDt };

std::string selection_method_name(SelectionMethod m);

struct SelectionResult {
  SelectionMethod method = SelectionMethod::SarganDt;
  std::vector<int> invalid_set;  // sorted
  std::vector<int> valid_set;    // complement
  TwoSLSFit post_fit;
  SarganResult sargan_result;
  double p_threshold = 0.0;  // Sargan-based methods
  double lambda = 0.0;       // cross-validated methods
  int path_step = -1;        // accepted set size, or grid index for cv
  std::vector<std::string> warnings;
  std::vector<std::string> diagnostics;
};

// Default acceptance threshold 0.1 / log(n).
double default_p_threshold(int n);

// Walks the path's first-entry order: the candidate invalid set of size k is
// the first k entries. Accepts the first candidate whose Sargan p-value
// exceeds p_threshold; reaching zero degrees of freedom accepts the
// just-identified model with a warning.
SelectionResult downward_testing(const Dataset& data, const LarsPath& path, double p_threshold);

// Tests every invalid set of each size instead of only nested path prefixes.
// Within the first accepting size, returns the set with the largest p-value.
// p_threshold <= 0 means "use the default for this sample size".
SelectionResult exhaustive_downward_testing(const Dataset& data,
                                            std::size_t cap = 2'000'000,
                                            double p_threshold = 0.0);

// 2SLS refit on a chosen invalid set (the post-selection estimator).
TwoSLSFit post_selection_2sls(const Dataset& data, std::vector<int> invalid_set);

enum class CvRule { Min, OneSe };

// K-fold selection of the penalty over the full-data breakpoint grid. Each
// fold refits the path on the training rows with the same weights and scores
// a held-out overidentification criterion n_test (r' P_Ztest r) / (r' r).
// The chosen invalid set is the support of the full-data path at the winning
// lambda.
SelectionResult cv_select(const Dataset& data, const AdaptiveWeights& weights, int folds,
                          CvRule rule, std::uint64_t seed);

// Both rules from one set of fold fits (they share all the heavy work).
std::pair<SelectionResult, SelectionResult> cv_select_both(const Dataset& data,
                                                           const AdaptiveWeights& weights,
                                                           int folds, std::uint64_t seed);

}  // namespace ivsel
