#pragma once

#include <stdexcept>
#include <string>

namespace concov {

/// Invalid arguments or inputs that do not match the expected shape.
class InputError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed model, dataset or abstraction files.
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// The LP solver cannot handle a problem (it is too large for the dense
/// tableau).
class SolverError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace concov
