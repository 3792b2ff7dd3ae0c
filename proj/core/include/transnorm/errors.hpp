#pragma once

#include <stdexcept>
#include <string>

namespace tn {

/// Shape or dimension disagreement between tensors/configs.
class DimensionError : public std::runtime_error {
 public:
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid or inconsistent configuration, rejected at construction time.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Violated call contract (e.g. non-scalar loss, invalid class id).
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite values encountered during training/inference.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File format / parse failures (PGM, checkpoint, JSON configs).
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Checkpoint/config/data incompatibilities detected at load time.
class CompatError : public std::runtime_error {
 public:
  explicit CompatError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace tn
