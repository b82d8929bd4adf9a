#pragma once

#include <stdexcept>

namespace distil {

// Invalid parameters or configuration (bad tau, degenerate class count, ...).
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent data: parse failures, duplicate ids, unknown
// labels, shape mismatches, missing run artifacts.
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Non-finite values encountered during training.
class DivergenceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace distil
