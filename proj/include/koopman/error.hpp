#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace koopman {

enum class ErrorKind {
  NonFinite,
  NonDiagonalizable,
  NegativeRealEigenvalue,
  IllConditioned,
  ShapeMismatch,
  UnsupportedPrimitive,
  IrregularInput,
  EmptySeries,
  DegenerateMask,
  UnsortedTimes,
  Diverged,
  EmptyDataset,
  FormatVersionMismatch,
  Corrupt,
  NoObservations,
  DegeneratePeriod,
  InvalidArgument,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::NonDiagonalizable: return "NonDiagonalizable";
    case ErrorKind::NegativeRealEigenvalue: return "NegativeRealEigenvalue";
    case ErrorKind::IllConditioned: return "IllConditioned";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::UnsupportedPrimitive: return "UnsupportedPrimitive";
    case ErrorKind::IrregularInput: return "IrregularInput";
    case ErrorKind::EmptySeries: return "EmptySeries";
    case ErrorKind::DegenerateMask: return "DegenerateMask";
    case ErrorKind::UnsortedTimes: return "UnsortedTimes";
    case ErrorKind::Diverged: return "Diverged";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::FormatVersionMismatch: return "FormatVersionMismatch";
    case ErrorKind::Corrupt: return "Corrupt";
    case ErrorKind::NoObservations: return "NoObservations";
    case ErrorKind::DegeneratePeriod: return "DegeneratePeriod";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the kinds above so
/// callers (and the CLI exit-code mapping) can branch on it.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  /// Numerical failures map to CLI exit code 3; everything else is a usage error.
  bool is_numerical() const noexcept {
    switch (kind_) {
      case ErrorKind::NonFinite:
      case ErrorKind::NonDiagonalizable:
      case ErrorKind::NegativeRealEigenvalue:
      case ErrorKind::IllConditioned:
      case ErrorKind::Diverged:
        return true;
      default:
        return false;
    }
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace koopman
