#pragma once

#include <stdexcept>
#include <string>

namespace dk {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid construction parameters: shapes, init ranges, model specs, scheduler names.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Operand shapes do not conform for an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an API contract (non-scalar backward, missing adaptor keys, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Bad data values: out-of-vocabulary ids, out-of-range labels, fully masked inputs.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Weight file could not be decoded or does not match the expected spec.
class FormatError : public Error {
 public:
  using Error::Error;
};

class RegistrationError : public Error {
 public:
  using Error::Error;
};

/// Malformed JSON text.
class ParseError : public Error {
 public:
  using Error::Error;
};

enum class ValidationCode {
  unknown_key,
  bad_type,
  out_of_range,
  unregistered_name,
  layer_range,
  dim_mismatch,
  incompatible,
};

const char* to_string(ValidationCode code);

/// Well-formed configuration that violates a documented constraint.
class ValidationError : public Error {
 public:
  ValidationError(ValidationCode code, const std::string& message)
      : Error(message), code_(code) {}
  ValidationCode code() const { return code_; }

 private:
  ValidationCode code_;
};

}  // namespace dk
