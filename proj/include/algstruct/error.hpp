#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace algstruct {

// Base for every error the library raises. `kind()` is a short stable tag the
// CLI prints so failures stay machine-parsable.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct ModulusMismatch : Error {
  explicit ModulusMismatch(const std::string& w) : Error("modulus-mismatch", w) {}
};
struct ArityError : Error {
  explicit ArityError(const std::string& w) : Error("arity", w) {}
};
struct UnmappedMultiset : Error {
  explicit UnmappedMultiset(const std::string& w) : Error("unmapped-multiset", w) {}
};
struct CapacityError : Error {
  explicit CapacityError(const std::string& w) : Error("capacity", w) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error("shape", w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("config", w) {}
};
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& w) : Error("divergence", w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error("io", w) {}
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& w)
      : Error("parse", "line " + std::to_string(line) + ": " + w), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace algstruct
