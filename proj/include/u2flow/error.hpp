#pragma once

#include <stdexcept>
#include <string>

namespace u2flow {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or truncated file content (.flo, PNG, checkpoint, config).
struct FormatError : Error {
  explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Caller violated a documented precondition (shape mismatch, bad argument).
struct ContractError : Error {
  explicit ContractError(const std::string& msg) : Error(msg) {}
};

// A masked reduction was asked to average over an empty pixel set.
struct DegenerateMaskError : ContractError {
  explicit DegenerateMaskError(const std::string& msg) : ContractError(msg) {}
};

// Non-finite values surfaced during training.
struct TrainingFault : Error {
  explicit TrainingFault(const std::string& msg) : Error(msg) {}
};

namespace detail {
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}
}  // namespace detail

}  // namespace u2flow
