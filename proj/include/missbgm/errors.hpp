#ifndef MISSBGM_ERRORS_HPP
#define MISSBGM_ERRORS_HPP

#include <stdexcept>

namespace missbgm {

// Non-finite values where finite ones are required (losses, activations,
// Hamiltonians outside the reject path).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration: unknown keys, out-of-range values.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace missbgm

#endif  // MISSBGM_ERRORS_HPP
