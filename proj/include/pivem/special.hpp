#pragma once

// Integrals of exp(beta - |dx + s dv|^2) over a segment of local time.

#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/special_functions/erf.hpp>

namespace pivem {

/// Below this relative speed a segment is treated as constant distance.
inline constexpr double kMinRelativeSpeed = 1e-8;

/// exp(x^2) erfc(x), accurate for large positive x where erfc underflows.
inline double erfcx(double x) {
  if (x < 0.0) return 2.0 * std::exp(x * x) - erfcx(-x);
  if (x <= 26.0) return std::exp(x * x) * boost::math::erfc(x);
  // Asymptotic series; the sixth term is below 1e-17 for x > 26.
  const double inv2x2 = 1.0 / (2.0 * x * x);
  double term = 1.0, sum = 1.0;
  for (int n = 1; n <= 6; ++n) {
    term *= -(2.0 * n - 1.0) * inv2x2;
    sum += term;
  }
  return sum / (x * std::sqrt(std::numbers::pi));
}

/// Squared distance |dx + s dv|^2 = c + 2 p s + a2 s^2 along one bin.
struct SegmentQuadratic {
  double c = 0.0;     // |dx|^2
  double p = 0.0;     // <dx, dv>
  double a2 = 0.0;    // |dv|^2
  double vertex = 0.0;  // minimum over all s, computed without cancellation

  template <typename DX, typename DV>
  static SegmentQuadratic from(const DX& dx, const DV& dv) {
    SegmentQuadratic q;
    q.c = dx.squaredNorm();
    q.p = dx.dot(dv);
    q.a2 = dv.squaredNorm();
    if (q.a2 > 0.0) q.vertex = (dx - (q.p / q.a2) * dv).squaredNorm();
    return q;
  }

  double at(double s) const { return std::max(0.0, c + s * (2.0 * p + a2 * s)); }
  double speed() const { return std::sqrt(a2); }
  bool is_static() const { return speed() < kMinRelativeSpeed; }
  /// Location of the minimum (meaningful only when not static).
  double critical_time() const { return -p / a2; }
};

/// Closed-form integral of exp(beta - q(s)) over [lo, hi].
inline double segment_integral(const SegmentQuadratic& q, double beta, double lo, double hi) {
  if (!(hi > lo)) return 0.0;
  if (q.is_static()) return std::exp(beta - q.c) * (hi - lo);
  const double a = q.speed();
  const double shift = q.p / a;
  const double ul = a * lo + shift;
  const double uu = a * hi + shift;
  constexpr double half_sqrt_pi = 0.88622692545275801365;
  if (ul >= 0.0) {
    const double d = erfcx(ul) - std::exp((ul - uu) * (ul + uu)) * erfcx(uu);
    return std::exp(beta - q.at(lo)) * half_sqrt_pi * d / a;
  }
  if (uu <= 0.0) {
    const double d = erfcx(-uu) - std::exp((uu - ul) * (uu + ul)) * erfcx(-ul);
    return std::exp(beta - q.at(hi)) * half_sqrt_pi * d / a;
  }
  const double d = boost::math::erf(uu) - boost::math::erf(ul);
  return std::exp(beta - q.vertex) * half_sqrt_pi * d / a;
}

/// Zeroth, first and second moments in s of exp(beta - q(s)) over [lo, hi].
struct SegmentMoments {
  double m0 = 0.0;
  double m1 = 0.0;
  double m2 = 0.0;
};

inline SegmentMoments segment_moments(const SegmentQuadratic& q, double beta, double lo, double hi) {
  SegmentMoments m;
  if (!(hi > lo)) return m;
  if (q.is_static()) {
    const double e = std::exp(beta - q.c);
    m.m0 = e * (hi - lo);
    m.m1 = e * (hi * hi - lo * lo) / 2.0;
    m.m2 = e * (hi * hi * hi - lo * lo * lo) / 3.0;
    return m;
  }
  m.m0 = segment_integral(q, beta, lo, hi);
  if (q.speed() * (hi - lo) >= 0.05) {
    // Integration by parts against q'(s) = 2p + 2 a2 s.
    const double el = std::exp(beta - q.at(lo));
    const double eu = std::exp(beta - q.at(hi));
    m.m1 = (0.5 * (el - eu) - q.p * m.m0) / q.a2;
    m.m2 = (m.m0 + lo * el - hi * eu - 2.0 * q.p * m.m1) / (2.0 * q.a2);
    return m;
  }
  // The recurrences lose precision when the segment is short relative to the
  // speed; the integrand is then nearly polynomial and Gauss-Legendre is exact
  // to rounding.
  using GL = boost::math::quadrature::gauss<double, 20>;
  m.m1 = GL::integrate([&](double s) { return s * std::exp(beta - q.at(s)); }, lo, hi);
  m.m2 = GL::integrate([&](double s) { return s * s * std::exp(beta - q.at(s)); }, lo, hi);
  return m;
}

}  // namespace pivem
