#pragma once

#include <stdexcept>
#include <string>

namespace ftwa {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or feature-map dimensions do not match an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Image too small for the requested resampling.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration (sampler sizes, schedules, unknown keys).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Identity label outside the classifier vocabulary.
class LabelError : public Error {
 public:
  using Error::Error;
};

/// Evaluation protocol violated (e.g. query identity missing from gallery).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint unreadable or incompatible with the requested model.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Dataset files missing or unreadable.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A loss component became NaN or infinite.
class DivergenceError : public Error {
 public:
  DivergenceError(std::string component, const std::string& what)
      : Error(what), component_(std::move(component)) {}
  const std::string& component() const noexcept { return component_; }

 private:
  std::string component_;
};

}  // namespace ftwa
