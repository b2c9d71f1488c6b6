#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace aeq {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed netlist or configuration text. `line()` is 1-based; 0 means the
/// problem concerns the document as a whole.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A netlist violates a structural invariant (duplicate names, bad parameters,
/// unknown nodes, topology mismatches).
class NetlistError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure of the steady-state solve.
class SolveError : public Error {
 public:
  enum class Kind { Singular, NonConvergence };

  SolveError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace aeq
