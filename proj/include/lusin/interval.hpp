#pragma once

#include "lusin/core.hpp"

namespace lusin {

// Closed interval with outward widening after every operation so that
// round-to-nearest errors cannot make an enclosure unsound.
struct Interval {
  double lo = 0.0, hi = 0.0;

  Interval() = default;
  Interval(double v) : lo(v), hi(v) {}
  Interval(double l, double h) : lo(l), hi(h) {}

  static Interval whole() {
    const double inf = std::numeric_limits<double>::infinity();
    return {-inf, inf};
  }
  double mag() const { return std::max(std::abs(lo), std::abs(hi)); }
  double mig() const { return (lo <= 0.0 && hi >= 0.0) ? 0.0 : std::min(std::abs(lo), std::abs(hi)); }
  bool contains(double x) const { return lo <= x && x <= hi; }
  bool contains_zero() const { return lo <= 0.0 && hi >= 0.0; }
  bool is_point() const { return lo == hi; }
  double width() const { return hi - lo; }
};

inline Interval widen(Interval a) {
  const double inf = std::numeric_limits<double>::infinity();
  if (std::isnan(a.lo) || std::isnan(a.hi)) return Interval::whole();
  return {std::nextafter(std::nextafter(a.lo, -inf), -inf), std::nextafter(std::nextafter(a.hi, inf), inf)};
}

inline Interval hull(Interval a, Interval b) { return {std::min(a.lo, b.lo), std::max(a.hi, b.hi)}; }

inline Interval operator+(Interval a, Interval b) { return widen({a.lo + b.lo, a.hi + b.hi}); }
inline Interval operator-(Interval a) { return {-a.hi, -a.lo}; }
inline Interval operator-(Interval a, Interval b) { return widen({a.lo - b.hi, a.hi - b.lo}); }
inline Interval operator*(Interval a, Interval b) {
  if (a.is_point() && a.lo == 0.0) return {0.0, 0.0};
  if (b.is_point() && b.lo == 0.0) return {0.0, 0.0};
  double p[4] = {a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi};
  double l = p[0], h = p[0];
  for (double v : p) {
    if (std::isnan(v)) return Interval::whole();
    l = std::min(l, v);
    h = std::max(h, v);
  }
  return widen({l, h});
}
inline Interval reciprocal(Interval b) {
  if (b.contains_zero()) return Interval::whole();
  return widen({1.0 / b.hi, 1.0 / b.lo});
}
inline Interval operator/(Interval a, Interval b) { return a * reciprocal(b); }

inline Interval sqr(Interval a) {
  if (a.contains_zero()) return widen({0.0, std::max(a.lo * a.lo, a.hi * a.hi)});
  double l = a.lo * a.lo, h = a.hi * a.hi;
  return widen({std::min(l, h), std::max(l, h)});
}

inline Interval isin(Interval a) {
  if (!std::isfinite(a.lo) || !std::isfinite(a.hi) || a.width() >= 2.0 * kPi) return {-1.0, 1.0};
  double l = std::min(std::sin(a.lo), std::sin(a.hi));
  double h = std::max(std::sin(a.lo), std::sin(a.hi));
  // crest at pi/2 + 2k pi, trough at -pi/2 + 2k pi
  double kc = std::ceil((a.lo - kPi / 2) / (2 * kPi));
  if (kPi / 2 + 2 * kPi * kc <= a.hi) h = 1.0;
  double kt = std::ceil((a.lo + kPi / 2) / (2 * kPi));
  if (-kPi / 2 + 2 * kPi * kt <= a.hi) l = -1.0;
  Interval r = widen({l, h});
  return {std::max(r.lo, -1.0), std::min(r.hi, 1.0)};
}
inline Interval icos(Interval a) { return isin(a + Interval(kPi / 2)); }
inline Interval iexp(Interval a) { return widen({std::exp(a.lo), std::exp(a.hi)}); }

}  // namespace lusin
