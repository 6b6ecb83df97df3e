#pragma once

#include <functional>
#include <stdexcept>
#include <string>

namespace lossfit {

// Bad input: malformed data, violated preconditions, schema errors.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// The numerics could not produce an answer (non-convergence, degenerate model).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Receives non-fatal diagnostics such as excluded devices or skipped trials.
using WarningSink = std::function<void(const std::string&)>;

inline void warn(const WarningSink& sink, const std::string& message) {
  if (sink) sink(message);
}

}  // namespace lossfit
