#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace sff {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

/// Failure categories raised by library operations. Each maps onto a CLI
/// exit code (see tools/sfflow.cpp).
enum class ErrorCode {
  InvalidArgument,
  ShadowedPoint,
  BorderPixel,
  DegenerateGradient,
  SingularHessian,
  NonCriticalPoint,
  SingularFxx,
  Inconsistent,
  RankDeficient,
  SingularityEncountered,
  NoBracket,
  Io,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ShadowedPoint: return "ShadowedPoint";
    case ErrorCode::BorderPixel: return "BorderPixel";
    case ErrorCode::DegenerateGradient: return "DegenerateGradient";
    case ErrorCode::SingularHessian: return "SingularHessian";
    case ErrorCode::NonCriticalPoint: return "NonCriticalPoint";
    case ErrorCode::SingularFxx: return "SingularFxx";
    case ErrorCode::Inconsistent: return "Inconsistent";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::SingularityEncountered: return "SingularityEncountered";
    case ErrorCode::NoBracket: return "NoBracket";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Counterclockwise quarter turn.
inline Vec2 perp(const Vec2& w) { return {-w.y(), w.x()}; }

}  // namespace sff
