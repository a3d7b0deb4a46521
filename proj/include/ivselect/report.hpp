#pragma once

#include <nlohmann/json.hpp>
#include <string>

#include "ivselect/dataset.hpp"
#include "ivselect/selection.hpp"
#include "ivselect/simulate.hpp"

namespace ivsel {

inline constexpr const char* kVersion = "0.1.0";

// Selection payload: everything needed to reproduce and interpret the fit.
// Deterministic field order and number formatting, so equal results
// serialize to equal bytes.
nlohmann::json selection_to_json(const SelectionResult& result, const Dataset& data);

// Study payload keyed by estimator name, in report row order.
nlohmann::json study_to_json(const StudyResult& study);

// CSV mirror of the study table. Fixed formatting; no timestamps, so reruns
// are byte-identical.
std::string study_to_csv(const StudyResult& study);

// Fixed-width console table mirroring the CSV columns.
std::string study_to_text(const StudyResult& study);

// Console summary of a selection fit.
std::string selection_to_text(const SelectionResult& result, const Dataset& data);

// Envelope with command echo, config echo, version and wall time.
nlohmann::json run_report(const std::string& command, const nlohmann::json& config_echo,
                          const nlohmann::json& payload, double wall_seconds);

}  // namespace ivsel
