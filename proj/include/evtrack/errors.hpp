#pragma once

#include <stdexcept>
#include <string>

namespace evtrack {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A parameter vector or point set has the wrong dimension.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed mesh, model, or image input.
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

/// A point was projected with non-positive camera depth.
class BehindCameraError : public Error {
 public:
  using Error::Error;
};

/// Procrustes alignment could not be solved (too few points or rank deficient).
class AlignmentError : public Error {
 public:
  using Error::Error;
};

/// An objective or gradient evaluated to a non-finite value.
class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string& term, const std::string& what)
      : Error(what), term_(term) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

/// File could not be read, written, or parsed.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace evtrack
