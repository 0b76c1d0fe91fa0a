#pragma once
#include <stdexcept>
#include <string>

namespace wgm {

// Thrown when an input model fails a structural precondition (Markov structure,
// Gibbs bound, aperiodicity, positivity, ...). CLI maps this to exit code 3.
struct hypothesis_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown on numerical faults: non-convergence, NaN/overflow, truncation budget
// exceeded, recursion fault. CLI maps this to exit code 4.
struct numerical_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown on malformed configuration or arguments. CLI maps this to exit code 2.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace wgm
