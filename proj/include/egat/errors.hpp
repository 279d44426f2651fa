#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace egat {

// Root of every error raised by the library. The CLI maps subclasses to
// process exit codes (config 2, data 3, divergence 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Violated call contract (e.g. backward() on a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Sequence shorter than a temporal operator's receptive field.
class LengthError : public Error {
 public:
  LengthError(const std::string& what, std::size_t required)
      : Error(what), required_(required) {}
  std::size_t required_length() const noexcept { return required_; }

 private:
  std::size_t required_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

class DuplicateIdError : public DataError {
 public:
  explicit DuplicateIdError(std::string id)
      : DataError("duplicate sensor id: " + id), id_(std::move(id)) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

// Cached attention scores no longer match the parameters or inputs.
class StaleCacheError : public Error {
 public:
  using Error::Error;
};

// No sensor lies within the smoothing radius of a queried location.
class UncoveredLocationError : public Error {
 public:
  UncoveredLocationError(const std::string& what, double nearest_m)
      : Error(what), nearest_m_(nearest_m) {}
  double nearest_distance_m() const noexcept { return nearest_m_; }

 private:
  double nearest_m_;
};

class IncompatibleCheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace egat
