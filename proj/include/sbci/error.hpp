#pragma once

#include <stdexcept>
#include <string>

namespace sbci {

/// Base of every exception thrown by the library. `code()` is a short
/// machine-readable category used by the CLI error line.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error("shape", w) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("config", w) {}
};

struct DesignError : Error {
  explicit DesignError(const std::string& w) : Error("design", w) {}
};

struct DegenerateInputError : Error {
  explicit DegenerateInputError(const std::string& w) : Error("degenerate", w) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& w) : Error("format", w) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error("numeric", w) {}
};

}  // namespace sbci
