#pragma once

#include <stdexcept>
#include <string>

namespace superlim {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: parse errors, dimension mismatches, invariant violations.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an operation precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// A numerical routine failed to reach its contract (step underflow,
/// non-convergence, band violation).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// The scenario contradicts a structural assumption (e.g. not supercritical).
class ModelError : public Error {
 public:
  using Error::Error;
};

/// Skeleton simulation exceeded its population cap.
class PopulationCapError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace superlim
