#pragma once

#include <stdexcept>
#include <string>

namespace smskd {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Bad argument value (non-positive temperature, negative weight, ...).
class ParameterError : public Error {
  public:
    using Error::Error;
};

// Shape mismatch between tensors; message carries both shapes.
class DimensionError : public Error {
  public:
    using Error::Error;
};

// NaN/Inf encountered, or training diverged. CLI exit code 4.
class NumericError : public Error {
  public:
    using Error::Error;
};

// API misuse: non-scalar loss passed to backward, missing reference logits, ...
class ContractError : public Error {
  public:
    using Error::Error;
};

// Experiment configuration failed validation. CLI exit code 2.
class ConfigError : public Error {
  public:
    using Error::Error;
};

// On-disk data violated its format contract. CLI exit code 3.
class DataFormatError : public Error {
  public:
    using Error::Error;
};

// Checkpoint CRC mismatch or structural corruption.
class IntegrityError : public DataFormatError {
  public:
    using DataFormatError::DataFormatError;
};

}  // namespace smskd
