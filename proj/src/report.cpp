#include "ivselect/report.hpp"

#include <cstdio>
#include <sstream>

namespace ivsel {

namespace {

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

nlohmann::json selection_to_json(const SelectionResult& result, const Dataset& data) {
  nlohmann::json j;
  j["method"] = selection_method_name(result.method);

  nlohmann::json invalid = nlohmann::json::array();
  for (int idx : result.invalid_set) invalid.push_back(data.instrument_labels.at(idx));
  nlohmann::json valid = nlohmann::json::array();
  for (int idx : result.valid_set) valid.push_back(data.instrument_labels.at(idx));
  j["invalid_instruments"] = invalid;
  j["valid_instruments"] = valid;

  Eigen::VectorXd se = result.post_fit.std_errors();
  nlohmann::json beta;
  for (int q = 0; q < data.kx(); ++q)
    beta[data.exposure_labels.at(q)] = {{"estimate", result.post_fit.beta_hat(q)},
                                        {"std_error", se(q)}};
  j["beta"] = beta;
  nlohmann::json alpha;
  for (std::size_t t = 0; t < result.invalid_set.size(); ++t)
    alpha[data.instrument_labels.at(result.invalid_set[t])] = {
        {"estimate", result.post_fit.alpha_hat(static_cast<int>(t))},
        {"std_error", se(data.kx() + static_cast<int>(t))}};
  j["alpha"] = alpha;

  j["sargan"] = {{"statistic", result.sargan_result.statistic},
                 {"df", result.sargan_result.df},
                 {"p_value", result.sargan_result.p_value}};
  j["sigma2"] = result.post_fit.sigma2_hat;
  j["path_step"] = result.path_step;
  if (result.method == SelectionMethod::SarganDt || result.method == SelectionMethod::ExhaustiveDt)
    j["p_threshold"] = result.p_threshold;
  if (result.method == SelectionMethod::CvMin || result.method == SelectionMethod::CvOneSe)
    j["lambda"] = result.lambda;
  j["warnings"] = result.warnings;
  j["diagnostics"] = result.diagnostics;
  return j;
}

nlohmann::json study_to_json(const StudyResult& study) {
  nlohmann::json rows = nlohmann::json::array();
  for (Estimator e : study.order) {
    const StudyMetrics& m = study.metrics.at(e);
    nlohmann::json row;
    row["estimator"] = estimator_name(e);
    row["mae"] = m.mae;
    row["sd"] = m.sd;
    if (m.has_selection) {
      row["mean_invalid"] = m.mean_invalid;
      row["freq_all_invalid"] = m.freq_all_invalid;
      row["freq_oracle"] = m.freq_oracle;
    }
    row["reps"] = m.reps;
    row["failures"] = m.failures;
    rows.push_back(row);
  }
  return nlohmann::json{{"estimators", rows}};
}

std::string study_to_csv(const StudyResult& study) {
  std::ostringstream os;
  os << "estimator,mae,sd,mean_invalid,freq_all_invalid,freq_oracle\n";
  for (Estimator e : study.order) {
    const StudyMetrics& m = study.metrics.at(e);
    os << estimator_name(e) << "," << fixed4(m.mae) << "," << fixed4(m.sd) << ",";
    if (m.has_selection)
      os << fixed4(m.mean_invalid) << "," << fixed4(m.freq_all_invalid) << ","
         << fixed4(m.freq_oracle);
    else
      os << ",,";
    os << "\n";
  }
  return os.str();
}

std::string study_to_text(const StudyResult& study) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-26s %8s %8s %10s %9s %9s\n", "estimator", "MAE", "SD",
                "#invalid", "p.allinv", "p.oracle");
  os << buf;
  for (Estimator e : study.order) {
    const StudyMetrics& m = study.metrics.at(e);
    if (m.has_selection)
      std::snprintf(buf, sizeof(buf), "%-26s %8.4f %8.4f %10.3f %9.3f %9.3f\n",
                    estimator_name(e).c_str(), m.mae, m.sd, m.mean_invalid, m.freq_all_invalid,
                    m.freq_oracle);
    else
      std::snprintf(buf, sizeof(buf), "%-26s %8.4f %8.4f %10s %9s %9s\n",
                    estimator_name(e).c_str(), m.mae, m.sd, "", "", "");
    os << buf;
  }
  return os.str();
}

std::string selection_to_text(const SelectionResult& result, const Dataset& data) {
  std::ostringstream os;
  os << "method: " << selection_method_name(result.method) << "\n";
  os << "invalid instruments (" << result.invalid_set.size() << "):";
  for (int idx : result.invalid_set) os << " " << data.instrument_labels.at(idx);
  os << "\n";
  Eigen::VectorXd se = result.post_fit.std_errors();
  char buf[160];
  for (int q = 0; q < data.kx(); ++q) {
    std::snprintf(buf, sizeof(buf), "%-12s %12.6f  (se %.6f)\n",
                  data.exposure_labels.at(q).c_str(), result.post_fit.beta_hat(q), se(q));
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "Sargan: %.4f on %d df, p = %.4f", result.sargan_result.statistic,
                result.sargan_result.df, result.sargan_result.p_value);
  os << buf;
  if (result.method == SelectionMethod::SarganDt || result.method == SelectionMethod::ExhaustiveDt)
    os << " (threshold " << result.p_threshold << ")";
  os << "\n";
  for (const auto& w : result.warnings) os << "warning: " << w << "\n";
  return os.str();
}

nlohmann::json run_report(const std::string& command, const nlohmann::json& config_echo,
                          const nlohmann::json& payload, double wall_seconds) {
  nlohmann::json j;
  j["command"] = command;
  j["config"] = config_echo;
  j["version"] = kVersion;
  j["wall_time_s"] = wall_seconds;
  j["result"] = payload;
  return j;
}

}  // namespace ivsel
