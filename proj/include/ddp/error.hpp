#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ddp {

enum class ErrorKind {
  IndexOutOfBounds,
  ShapeMismatch,
  InvalidInput,
  InvalidParameter,
  InsufficientSamples,
  NumericalFailure,
  IoError,
  ManifestInvalid,
  InvalidLayerKind,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::IndexOutOfBounds: return "IndexOutOfBounds";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::InvalidParameter: return "InvalidParameter";
    case ErrorKind::InsufficientSamples: return "InsufficientSamples";
    case ErrorKind::NumericalFailure: return "NumericalFailure";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::ManifestInvalid: return "ManifestInvalid";
    case ErrorKind::InvalidLayerKind: return "InvalidLayerKind";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the kinds above so the
/// CLI can emit a machine-readable error line.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace ddp
