#pragma once

#include "lusin/expr.hpp"

namespace lusin {

struct Cone {
  Vec axis;
  double half_angle = 0.0;

  Cone() = default;
  Cone(Vec a, double alpha) : axis(std::move(a)), half_angle(alpha) {
    require(alpha > 0.0 && alpha < kPi / 2, "cone half-angle must lie in (0, pi/2)");
    require(all_finite(axis) && std::abs(norm(axis) - 1.0) <= 1e-12, "cone axis must be a unit vector");
  }
  int dim() const { return static_cast<int>(axis.size()); }
};

struct Subspace {
  int d = 0;
  std::vector<Vec> basis;

  int dim() const { return static_cast<int>(basis.size()); }
  static Subspace zero(int d) { return {d, {}}; }
  static Subspace span(const std::vector<Vec>& vs) {
    require(!vs.empty(), "span of an empty list needs an explicit dimension");
    return {static_cast<int>(vs[0].size()), orthonormalize(vs)};
  }
  Vec project(const Vec& v) const {
    Vec p(d, 0.0);
    for (const Vec& q : basis) {
      double c = dot(q, v);
      for (int k = 0; k < d; ++k) p[k] += c * q[k];
    }
    return p;
  }
  double projection_norm(const Vec& v) const {
    double s = 0.0;
    for (const Vec& q : basis) {
      double c = dot(q, v);
      s += c * c;
    }
    return std::sqrt(s);
  }
  void check_orthonormal(double tol = 1e-10) const {
    for (size_t i = 0; i < basis.size(); ++i) {
      require(static_cast<int>(basis[i].size()) == d, "subspace basis vector has wrong length");
      for (size_t j = i; j < basis.size(); ++j) {
        double want = i == j ? 1.0 : 0.0;
        require(std::abs(dot(basis[i], basis[j]) - want) <= tol, "subspace basis is not orthonormal");
      }
    }
  }
};

inline double c_alpha(double alpha) {
  require(alpha > 0.0 && alpha < kPi / 2, "c_alpha: alpha must lie in (0, pi/2)");
  return 1.0 + 1.0 / std::tan(alpha);
}

inline bool cone_contains(const Cone& c, const Vec& v) {
  require(all_finite(v), "cone_contains: non-finite vector");
  return dot(v, c.axis) >= std::cos(c.half_angle) * norm(v);
}

// L meets the cone only at 0 iff the largest v.axis over unit v in L, which
// is |P_L axis|, stays strictly below cos(alpha).
inline bool subspace_transverse(const Subspace& L, const Cone& c) {
  L.check_orthonormal();
  if (L.dim() >= L.d) return false;
  return L.projection_norm(c.axis) < std::cos(c.half_angle);
}

struct DirectionNet {
  int d = 0;
  double half_angle = 0.0;
  double geodesic_radius = 0.0;
  std::vector<Vec> directions;
  int refinements = 0;

  Json to_json() const {
    Json dirs = Json::array();
    for (const Vec& v : directions) dirs.push_back(v);
    return Json{{"d", d}, {"half_angle", half_angle}, {"geodesic_radius", geodesic_radius}, {"count", directions.size()}, {"directions", dirs}};
  }
};

// Uniform random subspace of dimension k via an orthonormalized Gaussian frame.
inline Subspace random_subspace(int d, int k, Rng& rng) {
  for (;;) {
    std::vector<Vec> frame;
    for (int i = 0; i < k; ++i) frame.push_back(gaussian_vec(d, rng));
    Subspace s{d, orthonormalize(frame)};
    if (s.dim() == k) return s;
  }
}

// Smallest over sampled unit vectors n of max_j n.v_j; the net covers at
// geodesic radius r when this is >= cos r.
inline double sampled_cover_cosine(const std::vector<Vec>& dirs, int d, int samples, Rng& rng, Vec* witness = nullptr) {
  double worst = 1.0;
  for (int s = 0; s < samples; ++s) {
    Vec n = random_unit(d, rng);
    double best = -1.0;
    for (const Vec& v : dirs) best = std::max(best, dot(n, v));
    if (best < worst) {
      worst = best;
      if (witness) *witness = n;
    }
  }
  return worst;
}

namespace detail {

inline std::vector<Vec> circle_net(int count) {
  std::vector<Vec> out;
  for (int i = 0; i < count; ++i) {
    double th = 2.0 * kPi * i / count;
    out.push_back({std::cos(th), std::sin(th)});
  }
  return out;
}

inline std::vector<Vec> spiral_net(int count) {
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  std::vector<Vec> out;
  for (int i = 0; i < count; ++i) {
    double z = 1.0 - (2.0 * i + 1.0) / count;
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    double th = golden * i;
    out.push_back({r * std::cos(th), r * std::sin(th), z});
  }
  return out;
}

// Greedy farthest-point selection from a random candidate pool until the
// pool is covered at `radius`.
inline std::vector<Vec> greedy_net(int d, int pool_size, double radius, Rng& rng) {
  std::vector<Vec> pool;
  for (int i = 0; i < pool_size; ++i) pool.push_back(random_unit(d, rng));
  // include the coordinate directions so the result is never degenerate
  for (int k = 0; k < d; ++k)
    for (double s : {1.0, -1.0}) {
      Vec e(d, 0.0);
      e[k] = s;
      pool.push_back(e);
    }
  const double target = std::cos(radius);
  std::vector<double> best(pool.size(), -2.0);
  std::vector<Vec> out;
  size_t next = pool.size() - 2 * d;
  for (;;) {
    out.push_back(pool[next]);
    const Vec& c = out.back();
    double worst = 2.0;
    size_t arg = 0;
    for (size_t i = 0; i < pool.size(); ++i) {
      best[i] = std::max(best[i], dot(pool[i], c));
      if (best[i] < worst) {
        worst = best[i];
        arg = i;
      }
    }
    if (worst >= target) break;
    next = arg;
  }
  return out;
}

}  // namespace detail

// Geodesic ((pi/2 - alpha)/2)-net of S^{d-1}. d = 2 is exact; for d >= 3 a
// spiral (d = 3) or greedy packing (d >= 4) candidate is certified by sampling
// and the candidate count doubled on failure.
inline DirectionNet build_direction_net(int d, double alpha, uint64_t seed = 7, int samples = 20000) {
  require(d >= 2 && d <= kMaxDim, "build_direction_net: dimension out of range");
  require(alpha > 0.0 && alpha < kPi / 2, "build_direction_net: alpha must lie in (0, pi/2)");
  DirectionNet net;
  net.d = d;
  net.half_angle = alpha;
  net.geodesic_radius = (kPi / 2 - alpha) / 2;
  const double r = net.geodesic_radius;
  if (d == 2) {
    // spacing <= pi/2 - alpha = 2r; the tiny slack keeps pi/4 at exactly 8
    int count = static_cast<int>(std::ceil(2.0 * kPi / (2.0 * r) - 1e-9));
    net.directions = detail::circle_net(std::max(count, 3));
    return net;
  }
  Rng rng(seed);
  // construct at a slightly smaller radius so sampling certification has slack
  const double build_r = 0.9 * r;
  const double cap = std::pow(build_r, d - 1);
  int count = static_cast<int>(std::ceil(2.0 * std::pow(2.0, d - 1) / cap)) + 2 * d;
  if (d == 3) count = static_cast<int>(std::ceil(4.0 / (build_r * build_r)));
  for (int attempt = 0; attempt <= 8; ++attempt) {
    std::vector<Vec> cand = d == 3 ? detail::spiral_net(count) : detail::greedy_net(d, count, build_r, rng);
    if (sampled_cover_cosine(cand, d, samples, rng) >= std::cos(r)) {
      net.directions = std::move(cand);
      net.refinements = attempt;
      return net;
    }
    count *= 2;
  }
  throw Error("build_direction_net: could not certify a net for d=" + std::to_string(d) + ", alpha=" + std::to_string(alpha));
}

struct NetReport {
  int trials = 0;
  long failures = 0;
  double worst_cover_cosine = 1.0;
  double required_cover_cosine = 1.0;
  bool cover_ok = true;
  std::vector<Subspace> witnesses;
  Vec cover_witness;

  bool pass() const { return failures == 0 && cover_ok; }
};

// Index of the first net direction whose cone is transverse to L, or -1.
inline int first_transverse(const DirectionNet& net, const Subspace& L) {
  if (L.dim() >= L.d) return -1;
  const double c = std::cos(net.half_angle);
  for (size_t j = 0; j < net.directions.size(); ++j)
    if (L.projection_norm(net.directions[j]) < c) return static_cast<int>(j);
  return -1;
}

inline NetReport verify_net(const DirectionNet& net, int d, int trials, uint64_t seed = 11) {
  require(!net.directions.empty(), "verify_net: empty net");
  Rng rng(seed);
  NetReport rep;
  rep.trials = trials;
  for (int k = 1; k <= d - 1; ++k)
    for (int t = 0; t < trials; ++t) {
      Subspace L = random_subspace(d, k, rng);
      if (first_transverse(net, L) < 0) {
        ++rep.failures;
        if (rep.witnesses.size() < 8) rep.witnesses.push_back(L);
      }
    }
  rep.required_cover_cosine = std::cos(net.geodesic_radius);
  rep.worst_cover_cosine = sampled_cover_cosine(net.directions, d, trials, rng, &rep.cover_witness);
  rep.cover_ok = rep.worst_cover_cosine >= rep.required_cover_cosine;
  return rep;
}

}  // namespace lusin
