#pragma once

#include <stdexcept>
#include <string>

namespace orc {

/// Base class for all toolkit errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed configuration, CSV, or command-line input.
class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& what) : Error(what) {}
};

/// Model evaluated outside its validity domain, or a degenerate model state.
class ModelError : public Error {
public:
  explicit ModelError(const std::string& what) : Error(what) {}
};

/// A solver failed to converge within its budget.
class NumericsError : public Error {
public:
  explicit NumericsError(const std::string& what) : Error(what) {}
};

/// An optimization problem has no feasible point within tolerances.
class InfeasibleError : public Error {
public:
  explicit InfeasibleError(const std::string& what) : Error(what) {}
};

}  // namespace orc
