#pragma once

#include <stdexcept>

namespace drflow {

/// Malformed or unreadable input data. The CLI maps this to exit code 4.
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or argument values. The CLI maps this to exit code 2.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// The OPF has no feasible dispatch. The CLI maps this to exit code 3.
struct infeasible_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace drflow
