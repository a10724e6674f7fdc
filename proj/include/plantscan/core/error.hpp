#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace plantscan {

enum class Errc {
  EmptyInput,
  DegenerateHull,
  MissingChannel,
  InsufficientPoints,
  GridMismatch,
  NoUnoccludedView,
  Unreachable,
  InvalidEndpoint,
  PlanningTimeout,
  DegenerateView,
  TrainingDiverged,
  InvalidFeature,
  ModelNotReady,
  BandMismatch,
  BandInvalid,
  EmptyRoi,
  InvalidTransform,
  NoOverlap,
  Undefined,
  DegenerateTarget,
  Precondition,
  ConfigError,
  StageDependencyError,
  IoError,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::DegenerateHull: return "DegenerateHull";
    case Errc::MissingChannel: return "MissingChannel";
    case Errc::InsufficientPoints: return "InsufficientPoints";
    case Errc::GridMismatch: return "GridMismatch";
    case Errc::NoUnoccludedView: return "NoUnoccludedView";
    case Errc::Unreachable: return "Unreachable";
    case Errc::InvalidEndpoint: return "InvalidEndpoint";
    case Errc::PlanningTimeout: return "PlanningTimeout";
    case Errc::DegenerateView: return "DegenerateView";
    case Errc::TrainingDiverged: return "TrainingDiverged";
    case Errc::InvalidFeature: return "InvalidFeature";
    case Errc::ModelNotReady: return "ModelNotReady";
    case Errc::BandMismatch: return "BandMismatch";
    case Errc::BandInvalid: return "BandInvalid";
    case Errc::EmptyRoi: return "EmptyRoi";
    case Errc::InvalidTransform: return "InvalidTransform";
    case Errc::NoOverlap: return "NoOverlap";
    case Errc::Undefined: return "Undefined";
    case Errc::DegenerateTarget: return "DegenerateTarget";
    case Errc::Precondition: return "Precondition";
    case Errc::ConfigError: return "ConfigError";
    case Errc::StageDependencyError: return "StageDependencyError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

/// Exception carrying a machine-checkable error code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace plantscan
