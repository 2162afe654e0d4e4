#pragma once

#include <stdexcept>
#include <string>

namespace fattack {

/// Root of every error the library throws. The CLI maps any of these to a
/// nonzero exit code with a one-line diagnostic.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A parameter outside its legal range (threshold, budget, config field).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse: consumed tape, empty dataset, refusing to overwrite, ...
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

}  // namespace fattack
