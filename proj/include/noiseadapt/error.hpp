#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace noiseadapt {

enum class ErrorKind {
  ShapeMismatch,
  NonFiniteValue,
  NotScalarLoss,
  DoubleBackward,
  NonDeterministicSegment,
  TimestepOutOfRange,
  DivergedTraining,
  InvalidRange,
  InvalidTimesteps,
  NegativeRadicand,
  EtaNonZero,
  PreconditionViolation,
  ModeMismatch,
  POutOfRange,
  NonFiniteGradient,
  StreamTooShort,
  FrameTooSmall,
  TooFewSamples,
  DimensionMismatch,
  EigenFailure,
  InvalidSpec,
  IoError,
  BadMagic,
  ShapeOverflow,
  ConfigError,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::NotScalarLoss: return "NotScalarLoss";
    case ErrorKind::DoubleBackward: return "DoubleBackward";
    case ErrorKind::NonDeterministicSegment: return "NonDeterministicSegment";
    case ErrorKind::TimestepOutOfRange: return "TimestepOutOfRange";
    case ErrorKind::DivergedTraining: return "DivergedTraining";
    case ErrorKind::InvalidRange: return "InvalidRange";
    case ErrorKind::InvalidTimesteps: return "InvalidTimesteps";
    case ErrorKind::NegativeRadicand: return "NegativeRadicand";
    case ErrorKind::EtaNonZero: return "EtaNonZero";
    case ErrorKind::PreconditionViolation: return "PreconditionViolation";
    case ErrorKind::ModeMismatch: return "ModeMismatch";
    case ErrorKind::POutOfRange: return "POutOfRange";
    case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorKind::StreamTooShort: return "StreamTooShort";
    case ErrorKind::FrameTooSmall: return "FrameTooSmall";
    case ErrorKind::TooFewSamples: return "TooFewSamples";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::EigenFailure: return "EigenFailure";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::ShapeOverflow: return "ShapeOverflow";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace noiseadapt
