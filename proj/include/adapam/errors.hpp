#pragma once

#include <stdexcept>
#include <string>

namespace adapam {

/// Base of every error raised by the library. `exit_code()` is what the CLI
/// returns when the error escapes a subcommand.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

/// Raised when a pipeline stage runs before the stage it depends on.
class StagedDependencyError : public Error {
 public:
  StagedDependencyError(std::string stage)
      : Error("missing upstream stage: " + stage), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }
  int exit_code() const noexcept override { return 3; }

 private:
  std::string stage_;
};

/// Training finished but the result misses its quality gate. `metrics` is a
/// JSON object text with the final measurements.
class TrainingFailure : public Error {
 public:
  TrainingFailure(const std::string& what, std::string metrics)
      : Error(what + " " + metrics), metrics_(std::move(metrics)) {}
  const std::string& metrics() const noexcept { return metrics_; }
  int exit_code() const noexcept override { return 4; }

 private:
  std::string metrics_;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 5; }
};

}  // namespace adapam
