#pragma once

#include <stdexcept>
#include <string>

namespace ivsel {

// Bad inputs: malformed files, unknown columns, dimension mismatches,
// out-of-range options. The CLI maps these to exit code 2.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure during estimation: rank deficiency, singular systems,
// underidentified models. The CLI maps these to exit code 3.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct RankError : NumericError {
  double sv_ratio = 0.0;
  RankError(const std::string& msg, double ratio) : NumericError(msg), sv_ratio(ratio) {}
};

}  // namespace ivsel
