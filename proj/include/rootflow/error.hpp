#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rootflow {

enum class ErrorKind {
  InvalidMeasure,  // mass, sign or ordering violations of a measure / CDF
  Config,          // out-of-range parameters
  Domain,          // argument outside the domain of a function
  Pole,            // evaluation at a root of the cotangent sum
  Numerical,       // solver failure
  Shape,           // mismatched sizes
  Precondition,    // input rejected by a documented precondition
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidMeasure: return "invalid-measure";
    case ErrorKind::Config: return "config";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Pole: return "pole";
    case ErrorKind::Numerical: return "numerical";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Precondition: return "precondition";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised when the cotangent sum is evaluated on top of a root.
class PoleError : public Error {
 public:
  PoleError(std::size_t root_index, const std::string& what)
      : Error(ErrorKind::Pole, what), root_index_(root_index) {}

  std::size_t root_index() const noexcept { return root_index_; }

 private:
  std::size_t root_index_;
};

namespace detail {

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool ok, ErrorKind kind, const std::string& what) {
  if (!ok) fail(kind, what);
}

}  // namespace detail

}  // namespace rootflow
