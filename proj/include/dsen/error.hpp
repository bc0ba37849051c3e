#pragma once

#include <stdexcept>
#include <string>

namespace dsen {

/// Broad failure categories. The CLI maps these onto its exit codes.
enum class ErrorKind {
  Usage,      // bad arguments or configuration
  Data,       // malformed input data or unmet preconditions on data
  Numeric,    // non-finite values, non-convergence
  Shape,      // tensor/array shape mismatch
  Format,     // bad file magic, version, or truncated payload
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::Usage, w) {}
};
struct DataError : Error {
  explicit DataError(const std::string& w) : Error(ErrorKind::Data, w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorKind::Numeric, w) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error(ErrorKind::Shape, w) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& w) : Error(ErrorKind::Format, w) {}
};

}  // namespace dsen
