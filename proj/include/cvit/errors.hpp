#pragma once

#include <stdexcept>
#include <string>

namespace cvit {

// Error taxonomy shared across the library. The CLI maps these onto exit
// codes: config/usage -> 2, numerical failure -> 3, incompatibility -> 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shapes that cannot be combined (channel mismatch, bad concat, ...).
struct DimensionError : Error {
  using Error::Error;
};

// API preconditions violated (non-scalar backward, empty manifest, ...).
struct ContractError : Error {
  using Error::Error;
};

// Bad configuration: unknown keys, invalid hyperparameters, bad presets.
struct ConfigError : Error {
  using Error::Error;
};

// NaN/Inf produced by a forward op, or a NaN loss during training.
struct NumericError : Error {
  using Error::Error;
};

// Missing or unreadable files, malformed images, truncated checkpoints.
struct IoError : Error {
  using Error::Error;
};

// Checkpoint config hash does not match the requested model configuration.
struct IncompatibilityError : Error {
  using Error::Error;
};

}  // namespace cvit
