#pragma once

#include <stdexcept>
#include <string>

namespace wb {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file; message carries line/record context.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A data-model invariant does not hold. `record_id` is empty for
/// manifest-level violations.
class InvariantError : public Error {
 public:
  InvariantError(const std::string& message, std::string record_id = {})
      : Error(message), record_id_(std::move(record_id)) {}
  const std::string& record_id() const noexcept { return record_id_; }

 private:
  std::string record_id_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// |train| + |validation| < n_max would be violated.
class BudgetError : public Error {
 public:
  using Error::Error;
};

/// Optimistic-concurrency version mismatch.
class ConflictError : public Error {
 public:
  ConflictError(const std::string& message, std::string record_id)
      : Error(message), record_id_(std::move(record_id)) {}
  const std::string& record_id() const noexcept { return record_id_; }

 private:
  std::string record_id_;
};

/// Caller-supplied request is invalid (bad action, missing label, unflagged sample ...).
class ValidationError : public Error {
 public:
  ValidationError(const std::string& message, std::string record_id = {})
      : Error(message), record_id_(std::move(record_id)) {}
  const std::string& record_id() const noexcept { return record_id_; }

 private:
  std::string record_id_;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

}  // namespace wb
