#ifndef SOFTPL_ERRORS_HPP
#define SOFTPL_ERRORS_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

namespace softpl {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Bad or unreadable input data. The CLI maps these to exit code 3.
class InputError : public Error {
public:
  using Error::Error;
};

class ParseError : public InputError {
public:
  using InputError::InputError;
};

/// A parsed value lies outside its allowed range (score > 1, negative width, ...).
class RangeError : public InputError {
public:
  using InputError::InputError;
};

class DuplicateIdError : public InputError {
public:
  explicit DuplicateIdError(std::int64_t id)
      : InputError("duplicate id " + std::to_string(id)), id_(id) {}
  std::int64_t id() const noexcept { return id_; }

private:
  std::int64_t id_;
};

class UnknownImageError : public InputError {
public:
  using InputError::InputError;
};

class UnknownCategoryError : public InputError {
public:
  using InputError::InputError;
};

class DimensionMismatchError : public InputError {
public:
  using InputError::InputError;
};

class EmptySampleError : public InputError {
public:
  using InputError::InputError;
};

/// Out-of-range configuration. The CLI maps these to exit code 2.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// The consensus bracket 1 + beta*(n - 2) is not positive.
class NonPositiveFactorError : public ConfigError {
public:
  using ConfigError::ConfigError;
};

/// Output could not be written.
class IoError : public Error {
public:
  using Error::Error;
};

/// Detections handed to the clusterer do not share one (image, category) key.
class MixedKeyError : public Error {
public:
  using Error::Error;
};

/// Weighted fusion over a cluster whose scores sum to zero.
class DegenerateWeightError : public Error {
public:
  using Error::Error;
};

} // namespace softpl

#endif // SOFTPL_ERRORS_HPP
