#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace xlprompt {

/// Process exit codes used by the command line tool.
enum class exit_code : int {
  success = 0,
  configuration = 2,
  input = 3,
  environment = 4,
  generation = 5,
};

/// Base of every error raised by the library.
class error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
  virtual exit_code code() const noexcept = 0;
};

/// Inconsistent or incomplete configuration (templates, verbalizers, run settings).
class configuration_error : public error {
public:
  using error::error;
  exit_code code() const noexcept override { return exit_code::configuration; }
};

/// Malformed or out-of-contract input data.
class input_error : public error {
public:
  using error::error;
  exit_code code() const noexcept override { return exit_code::input; }
};

/// Missing files, unreadable artifacts and other environment problems.
class environment_error : public error {
public:
  using error::error;
  exit_code code() const noexcept override { return exit_code::environment; }
};

/// Synthetic data generation could not satisfy its constraints.
class generation_error : public error {
public:
  using error::error;
  exit_code code() const noexcept override { return exit_code::generation; }
};

/// A configuration that failed validation; carries every offending entry.
class validation_error : public configuration_error {
public:
  validation_error(const std::string& what, std::vector<std::string> offending)
      : configuration_error(compose(what, offending)), offending_(std::move(offending)) {}

  const std::vector<std::string>& offending() const noexcept { return offending_; }

private:
  static std::string compose(const std::string& what, const std::vector<std::string>& offending) {
    std::string msg = what;
    if (!offending.empty()) {
      msg += ":";
      for (const auto& entry : offending) {
        msg += "\n  - " + entry;
      }
    }
    return msg;
  }

  std::vector<std::string> offending_;
};

} // namespace xlprompt
