#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace teachgen {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A single input record failed schema validation.
class ValidationError : public Error {
 public:
  ValidationError(std::optional<std::size_t> record_index, std::string field,
                  const std::string& message)
      : Error(format(record_index, field, message)),
        record_index_(record_index),
        field_(std::move(field)) {}

  std::optional<std::size_t> record_index() const { return record_index_; }
  const std::string& field() const { return field_; }

 private:
  static std::string format(std::optional<std::size_t> index,
                            const std::string& field,
                            const std::string& message) {
    std::string out = "record";
    if (index) out += " " + std::to_string(*index);
    if (!field.empty()) out += ", field '" + field + "'";
    return out + ": " + message;
  }

  std::optional<std::size_t> record_index_;
  std::string field_;
};

/// Corpus-level consistency failure (e.g. duplicate ids).
class CorpusError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Transport or service failure from an external backend.
class BackendError : public Error {
 public:
  BackendError(const std::string& message, bool retryable)
      : Error(message), retryable_(retryable) {}
  bool retryable() const { return retryable_; }

 private:
  bool retryable_;
};

/// Numerical failure during training (non-finite loss or gradient).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace teachgen
