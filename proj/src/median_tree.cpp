#include "ivselect/median_tree.hpp"

#include <algorithm>
#include <sstream>

#include "ivselect/linalg.hpp"

namespace ivsel {

double median_of(std::vector<double> values) {
  if (values.empty()) throw ValidationError("median of empty set");
  std::sort(values.begin(), values.end());
  std::size_t m = values.size() / 2;
  if (values.size() % 2 == 1) return values[m];
  return 0.5 * (values[m - 1] + values[m]);
}

namespace {

// C(n, k) clamped to avoid overflow; anything past the clamp only needs to
// compare as "too many".
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

std::string subset_to_string(const std::vector<int>& s) {
  std::ostringstream os;
  os << "{";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i] + 1;
  os << "}";
  return os.str();
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

Eigen::VectorXd componentwise_median(const std::vector<Eigen::VectorXd>& vs) {
  Eigen::VectorXd out(vs.front().size());
  std::vector<double> comp(vs.size());
  for (Eigen::Index q = 0; q < out.size(); ++q) {
    for (std::size_t i = 0; i < vs.size(); ++i) comp[i] = vs[i](q);
    out(q) = median_of(comp);
  }
  return out;
}

}  // namespace

JustIdentifiedTable enumerate_just_identified(const Dataset& data, const BlockStructure* blocks,
                                              std::size_t cap) {
  data.validate();
  const int kx = data.kx();
  const int kz = data.kz();
  if (blocks) {
    blocks->validate(kx, kz);
    if (kx != 2)
      throw ValidationError("block-restricted enumeration is only supported for two exposures");
  }

  std::size_t count = binom_clamped(kz, kx, cap);
  if (count > cap) {
    std::ostringstream msg;
    msg << "subset enumeration too large: C(" << kz << "," << kx << ")";
    if (count == cap + 1)
      msg << " exceeds cap " << cap;
    else
      msg << " = " << count << " exceeds cap " << cap;
    throw ValidationError(msg.str());
  }

  // Full-sample first stage and reduced form. The just-identified estimate
  // for subset s solves the square system pi_hat(s,:) beta = delta_hat(s),
  // which coincides with the 2SLS fit that frees every instrument outside s.
  Eigen::MatrixXd targets(data.n(), kx + 1);
  targets.leftCols(kx) = data.X;
  targets.col(kx) = data.y;
  Eigen::MatrixXd coef = lstsq(data.Z, targets);
  Eigen::MatrixXd pi_hat = coef.leftCols(kx);
  Eigen::VectorXd delta_hat = coef.col(kx);

  JustIdentifiedTable table;
  table.kx = kx;
  table.kz = kz;
  table.with_blocks = blocks != nullptr;

  std::vector<int> subset(static_cast<std::size_t>(kx));
  for (int i = 0; i < kx; ++i) subset[static_cast<std::size_t>(i)] = i;
  do {
    if (blocks && !blocks->pair_covers_all(subset[0], subset[1], kx)) continue;
    Eigen::MatrixXd pi_s(kx, kx);
    Eigen::VectorXd delta_s(kx);
    for (int i = 0; i < kx; ++i) {
      pi_s.row(i) = pi_hat.row(subset[static_cast<std::size_t>(i)]);
      delta_s(i) = delta_hat(subset[static_cast<std::size_t>(i)]);
    }
    double ratio = sv_ratio(pi_s);
    if (ratio < kRankTol) {
      table.skipped.push_back({subset, "first-stage submatrix singular (sv ratio " +
                                           std::to_string(ratio) + ")"});
      continue;
    }
    JustIdentifiedEntry entry;
    entry.beta = pi_s.partialPivLu().solve(delta_s);
    entry.min_sv = ratio;
    table.entries.emplace(subset, std::move(entry));
  } while (next_combination(subset, kz));

  return table;
}

Eigen::VectorXd median_naive(const JustIdentifiedTable& table) {
  if (table.entries.empty()) throw NumericError("no just-identified estimates available");
  std::vector<Eigen::VectorXd> vs;
  vs.reserve(table.entries.size());
  for (const auto& [s, e] : table.entries) vs.push_back(e.beta);
  return componentwise_median(vs);
}

namespace {

// Memoized nested median. The value of a prefix depends only on its
// underlying unordered subset, so each subset is computed once even though
// the ordered recursion tree visits it once per ordering.
class MedianRecursion {
 public:
  explicit MedianRecursion(const JustIdentifiedTable& table) : table_(table) {}

  const Eigen::VectorXd& value(const std::vector<int>& key) {
    if (static_cast<int>(key.size()) == table_.kx) {
      auto it = table_.entries.find(key);
      if (it == table_.entries.end())
        throw NumericError("just-identified estimate missing for subset " +
                           subset_to_string(key));
      return it->second.beta;
    }
    auto hit = cache_.find(key);
    if (hit != cache_.end()) return hit->second;

    std::vector<Eigen::VectorXd> vals;
    vals.reserve(static_cast<std::size_t>(table_.kz - key.size()));
    for (int j = 0; j < table_.kz; ++j) {
      if (std::binary_search(key.begin(), key.end(), j)) continue;
      std::vector<int> child(key);
      child.insert(std::upper_bound(child.begin(), child.end(), j), j);
      vals.push_back(value(child));
    }
    return cache_.emplace(key, componentwise_median(vals)).first->second;
  }

 private:
  const JustIdentifiedTable& table_;
  std::map<std::vector<int>, Eigen::VectorXd> cache_;
};

}  // namespace

MedianTreeEstimate median_of_medians(const JustIdentifiedTable& table) {
  if (table.with_blocks)
    throw ValidationError("nested median requires a complete table; use the block variant");
  if (!table.skipped.empty()) {
    std::ostringstream msg;
    msg << "joint relevance fails for " << table.skipped.size() << " subset(s):";
    for (std::size_t i = 0; i < table.skipped.size() && i < 8; ++i)
      msg << " " << subset_to_string(table.skipped[i].subset);
    if (table.skipped.size() > 8) msg << " ...";
    throw NumericError(msg.str());
  }
  if (table.entries.empty()) throw NumericError("no just-identified estimates available");

  MedianRecursion rec(table);
  MedianTreeEstimate est;
  est.depth = table.kx - 1;
  est.beta_mm = rec.value({});
  for (int j = 0; j < table.kz; ++j) {
    if (table.kx == 1)
      est.per_instrument[j] = table.entries.at({j}).beta;
    else
      est.per_instrument[j] = rec.value({j});
  }
  return est;
}

MedianTreeEstimate block_median_of_medians(const JustIdentifiedTable& table,
                                           const BlockStructure& blocks) {
  if (table.kx != 2)
    throw ValidationError("block median estimator is only supported for two exposures");
  blocks.validate(table.kx, table.kz);

  MedianTreeEstimate est;
  est.depth = 1;
  std::vector<Eigen::VectorXd> tops;
  for (int j = 0; j < table.kz; ++j) {
    std::vector<Eigen::VectorXd> vals;
    bool any_admissible = false;
    for (int l = 0; l < table.kz; ++l) {
      if (l == j) continue;
      if (!blocks.pair_covers_all(std::min(j, l), std::max(j, l), table.kx)) continue;
      any_admissible = true;
      auto it = table.entries.find({std::min(j, l), std::max(j, l)});
      if (it != table.entries.end()) vals.push_back(it->second.beta);
    }
    if (!any_admissible)
      throw NumericError("instrument " + std::to_string(j + 1) + " has no admissible partner");
    if (vals.empty())
      throw NumericError("all admissible pairs for instrument " + std::to_string(j + 1) +
                         " were rank deficient");
    est.per_instrument[j] = componentwise_median(vals);
    tops.push_back(est.per_instrument[j]);
  }
  est.beta_mm = componentwise_median(tops);
  return est;
}

Eigen::VectorXd alpha_from_beta(const Dataset& data, const Eigen::VectorXd& beta) {
  if (beta.size() != data.kx())
    throw ValidationError("alpha_from_beta: beta length must match exposure count");
  return lstsq(data.Z, data.y - data.X * beta);
}

int min_valid_recursive(int kx, int kz) {
  if (kx < 1 || kz < kx) throw ValidationError("min_valid_recursive: need kz >= kx >= 1");
  return (kz + kx - 1) / 2 + 1;
}

int min_valid_naive(int kx, int kz) {
  if (kx < 1 || kz < kx) throw ValidationError("min_valid_naive: need kz >= kx >= 1");
  std::size_t total = binom_clamped(kz, kx, static_cast<std::size_t>(1) << 62);
  for (int kv = kx; kv <= kz; ++kv) {
    std::size_t c = binom_clamped(kv, kx, static_cast<std::size_t>(1) << 62);
    if (2 * c > total) return kv;
  }
  return kz;
}

}  // namespace ivsel
