#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "nett/error.hpp"

namespace nett {

/// Index function Phi(t) = C t^gamma with gamma in (0, 1]. The sqrt and
/// linear kinds are the gamma = 1/2 and gamma = 1 members.
struct RateFunction {
  enum class Kind { sqrt, linear, power };

  Kind kind = Kind::sqrt;
  double C = 1.0;
  double gamma = 0.5;  ///< used by Kind::power only

  static RateFunction sqrt_rate(double C = 1.0) { return {Kind::sqrt, C, 0.5}; }
  static RateFunction linear_rate(double C = 1.0) { return {Kind::linear, C, 1.0}; }
  static RateFunction power_rate(double C, double gamma) { return {Kind::power, C, gamma}; }

  double exponent() const noexcept {
    switch (kind) {
      case Kind::sqrt: return 0.5;
      case Kind::linear: return 1.0;
      case Kind::power: return gamma;
    }
    return gamma;
  }

  void validate() const {
    if (!(C > 0.0) || !std::isfinite(C)) throw InvalidArgument("RateFunction: C must be positive");
    if (kind == Kind::power && !(gamma > 0.0 && gamma <= 1.0))
      throw InvalidArgument("RateFunction: gamma must lie in (0, 1]");
  }

  double operator()(double t) const {
    if (t < 0.0) throw InvalidArgument("RateFunction: negative argument");
    switch (kind) {
      case Kind::sqrt: return C * std::sqrt(t);
      case Kind::linear: return C * t;
      case Kind::power: return C * std::pow(t, gamma);
    }
    return 0.0;
  }

  /// Fenchel conjugate of Phi^{-1}(s) = (s/C)^p, p = 1/gamma, at v >= 0:
  ///   p = 1:  0 if v <= 1/C, +inf otherwise
  ///   p > 1:  (1 - 1/p) v s*,  s* = (v C^p / p)^(1/(p-1))
  /// For p = 2 this is C^2 v^2 / 4.
  double inverse_conjugate(double v) const {
    if (v < 0.0) throw InvalidArgument("RateFunction: conjugate needs v >= 0");
    const double p = 1.0 / exponent();
    if (kind == Kind::linear || p == 1.0)
      return v <= 1.0 / C ? 0.0 : std::numeric_limits<double>::infinity();
    if (kind == Kind::sqrt) return C * C * v * v / 4.0;
    const double s = std::pow(v * std::pow(C, p) / p, 1.0 / (p - 1.0));
    return (1.0 - 1.0 / p) * v * s;
  }

  std::string name() const {
    switch (kind) {
      case Kind::sqrt: return "sqrt";
      case Kind::linear: return "linear";
      case Kind::power: return "power";
    }
    return "?";
  }
};

}  // namespace nett
