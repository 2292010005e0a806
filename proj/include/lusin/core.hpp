#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace lusin {

inline constexpr int kMaxDim = 8;
inline constexpr double kPi = 3.14159265358979323846;

using Vec = std::vector<double>;
using Rng = std::mt19937_64;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw Error(what);
}

inline std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline double dot(const double* a, const double* b, int d) {
  double s = 0.0;
  for (int k = 0; k < d; ++k) s += a[k] * b[k];
  return s;
}
inline double dot(const Vec& a, const Vec& b) { return dot(a.data(), b.data(), static_cast<int>(a.size())); }
inline double norm(const double* a, int d) { return std::sqrt(dot(a, a, d)); }
inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline bool all_finite(const Vec& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline Vec normalized(Vec v) {
  double n = norm(v);
  require(n > 0.0 && std::isfinite(n), "cannot normalize a zero or non-finite vector");
  for (double& x : v) x /= n;
  return v;
}

inline Vec gaussian_vec(int d, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vec v(d);
  for (double& x : v) x = g(rng);
  return v;
}

inline Vec random_unit(int d, Rng& rng) {
  for (;;) {
    Vec v = gaussian_vec(d, rng);
    double n = norm(v);
    if (n > 1e-12) {
      for (double& x : v) x /= n;
      return v;
    }
  }
}

// Modified Gram-Schmidt; drops vectors that become numerically dependent.
inline std::vector<Vec> orthonormalize(const std::vector<Vec>& in, double tol = 1e-12) {
  std::vector<Vec> out;
  for (Vec v : in) {
    for (int pass = 0; pass < 2; ++pass)
      for (const Vec& q : out) {
        double c = dot(v, q);
        for (size_t k = 0; k < v.size(); ++k) v[k] -= c * q[k];
      }
    double n = norm(v);
    if (n > tol) {
      for (double& x : v) x /= n;
      out.push_back(std::move(v));
    }
  }
  return out;
}

// Determinant by partial-pivot LU of a row-major n x n matrix.
inline double determinant(std::vector<double> a, int n) {
  double det = 1.0;
  for (int c = 0; c < n; ++c) {
    int p = c;
    for (int r = c + 1; r < n; ++r)
      if (std::abs(a[r * n + c]) > std::abs(a[p * n + c])) p = r;
    if (a[p * n + c] == 0.0) return 0.0;
    if (p != c) {
      for (int k = 0; k < n; ++k) std::swap(a[p * n + k], a[c * n + k]);
      det = -det;
    }
    double piv = a[c * n + c];
    det *= piv;
    for (int r = c + 1; r < n; ++r) {
      double f = a[r * n + c] / piv;
      if (f == 0.0) continue;
      for (int k = c; k < n; ++k) a[r * n + k] -= f * a[c * n + k];
    }
  }
  return det;
}

// Largest singular value of a row-major n x n matrix (cyclic Jacobi on A^T A).
inline double spectral_norm(const std::vector<double>& a, int n) {
  std::vector<double> s(n * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) s[i * n + j] += a[k * n + i] * a[k * n + j];
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += s[i * n + j] * s[i * n + j];
    if (off < 1e-30) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        double apq = s[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        double theta = (s[q * n + q] - s[p * n + p]) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0), sn = t * c;
        for (int k = 0; k < n; ++k) {
          double skp = s[k * n + p], skq = s[k * n + q];
          s[k * n + p] = c * skp - sn * skq;
          s[k * n + q] = sn * skp + c * skq;
        }
        for (int k = 0; k < n; ++k) {
          double spk = s[p * n + k], sqk = s[q * n + k];
          s[p * n + k] = c * spk - sn * sqk;
          s[q * n + k] = sn * spk + c * sqk;
        }
      }
  }
  double mx = 0.0;
  for (int i = 0; i < n; ++i) mx = std::max(mx, s[i * n + i]);
  return std::sqrt(mx);
}

// Closed axis-aligned box.
struct Box {
  Vec lo, hi;

  Box() = default;
  Box(Vec l, Vec h) : lo(std::move(l)), hi(std::move(h)) {}

  int dim() const { return static_cast<int>(lo.size()); }

  static Box empty(int d) {
    const double inf = std::numeric_limits<double>::infinity();
    return Box(Vec(d, inf), Vec(d, -inf));
  }
  static Box point(const double* x, int d) { return Box(Vec(x, x + d), Vec(x, x + d)); }

  bool is_empty() const {
    for (int k = 0; k < dim(); ++k)
      if (lo[k] > hi[k]) return true;
    return false;
  }
  void expand(const double* x) {
    for (int k = 0; k < dim(); ++k) {
      lo[k] = std::min(lo[k], x[k]);
      hi[k] = std::max(hi[k], x[k]);
    }
  }
  bool contains(const double* x) const {
    for (int k = 0; k < dim(); ++k)
      if (x[k] < lo[k] || x[k] > hi[k]) return false;
    return true;
  }
  bool contains_open(const double* x) const {
    for (int k = 0; k < dim(); ++k)
      if (x[k] <= lo[k] || x[k] >= hi[k]) return false;
    return true;
  }
  // True when `inner` sits in the interior with a positive margin on every axis.
  bool contains_strictly(const Box& inner) const {
    for (int k = 0; k < dim(); ++k)
      if (!(inner.lo[k] > lo[k] && inner.hi[k] < hi[k])) return false;
    return true;
  }
  Box inflated(double r) const {
    Box b = *this;
    for (int k = 0; k < dim(); ++k) {
      b.lo[k] -= r;
      b.hi[k] += r;
    }
    return b;
  }
  Box clipped(const Box& o) const {
    Box b = *this;
    for (int k = 0; k < dim(); ++k) {
      b.lo[k] = std::max(b.lo[k], o.lo[k]);
      b.hi[k] = std::min(b.hi[k], o.hi[k]);
    }
    return b;
  }
  double diameter() const {
    double s = 0.0;
    for (int k = 0; k < dim(); ++k) s += (hi[k] - lo[k]) * (hi[k] - lo[k]);
    return std::sqrt(s);
  }
  Vec center() const {
    Vec c(dim());
    for (int k = 0; k < dim(); ++k) c[k] = 0.5 * (lo[k] + hi[k]);
    return c;
  }
  // Smallest distance from an interior point to the boundary, over the box's interior points in `b`.
  double clearance(const Box& b) const {
    double m = std::numeric_limits<double>::infinity();
    for (int k = 0; k < dim(); ++k) m = std::min({m, b.lo[k] - lo[k], hi[k] - b.hi[k]});
    return m;
  }
  bool operator==(const Box& o) const { return lo == o.lo && hi == o.hi; }
};

// Signed L-infinity gap: positive iff the boxes are separated along some axis.
inline double box_gap(const Box& a, const Box& b) {
  double g = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < a.dim(); ++k) g = std::max({g, a.lo[k] - b.hi[k], b.lo[k] - a.hi[k]});
  return g;
}

inline double dist_to_box_boundary(const Box& b, const double* x) {
  double m = std::numeric_limits<double>::infinity();
  for (int k = 0; k < b.dim(); ++k) m = std::min({m, x[k] - b.lo[k], b.hi[k] - x[k]});
  return m;
}

}  // namespace lusin
