#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "ivselect/dataset.hpp"

namespace ivsel {

inline constexpr std::size_t kEnumerationCap = 2'000'000;

// Even-length inputs average the two central order statistics.
double median_of(std::vector<double> values);

struct JustIdentifiedEntry {
  Eigen::VectorXd beta;  // kx
  double min_sv = 0.0;   // singular value ratio of the first-stage submatrix
};

struct SkippedSubset {
  std::vector<int> subset;
  std::string reason;
};

// Estimates from every admissible kx-subset of instruments, each treating the
// remaining instruments as potentially invalid (just-identified fits).
struct JustIdentifiedTable {
  int kx = 0;
  int kz = 0;
  bool with_blocks = false;
  std::map<std::vector<int>, JustIdentifiedEntry> entries;  // key sorted
  std::vector<SkippedSubset> skipped;
};

// With blocks, only kx == 2 is supported and candidate pairs must jointly
// cover both exposures. Throws when the subset count exceeds cap.
JustIdentifiedTable enumerate_just_identified(const Dataset& data,
                                              const BlockStructure* blocks = nullptr,
                                              std::size_t cap = kEnumerationCap);

// Elementwise median over all stored subset estimates.
Eigen::VectorXd median_naive(const JustIdentifiedTable& table);

struct MedianTreeEstimate {
  Eigen::VectorXd beta_mm;
  std::map<int, Eigen::VectorXd> per_instrument;  // top-layer values
  int depth = 0;                                  // kx - 1 median layers
};

// Nested median recursion over instrument prefixes, memoized by unordered
// subset. Requires a complete (non-block) table.
MedianTreeEstimate median_of_medians(const JustIdentifiedTable& table);

// kx == 2 variant: per instrument, the median over its admissible partners,
// then the median over instruments.
MedianTreeEstimate block_median_of_medians(const JustIdentifiedTable& table,
                                           const BlockStructure& blocks);

// Direct-effect estimates implied by a candidate beta: lstsq(Z, y - X beta).
Eigen::VectorXd alpha_from_beta(const Dataset& data, const Eigen::VectorXd& beta);

// Smallest number of valid instruments under which the nested median
// recursion identifies beta: k_valid > (kz + kx - 1) / 2.
int min_valid_recursive(int kx, int kz);

// Same for the one-shot median over all kx-subsets: C(k_valid, kx) > C(kz, kx) / 2.
int min_valid_naive(int kx, int kz);

}  // namespace ivsel
