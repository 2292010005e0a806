#pragma once

#include "lusin/measures.hpp"
#include "lusin/report.hpp"

namespace lusin {

inline Box whole_space(int d) { return Box(Vec(d, -1e300), Vec(d, 1e300)); }

// |s| on a target atom beyond this (relative to 1 + |x|) means the atom is not on the carrier
inline constexpr double kOffCarrierTol = 1e-12;

// Planar curve X(y) = p0 + y b + p(y) a, y in [y0, y1], read as a graph
// x.e = F(x.e_perp) over the line e_perp. The node evaluates the transverse
// coordinate s(x) = x.e - F(x.e_perp); F is continued linearly past the ends.
// `slope` certifies |F'| on the whole line.
class CurveCoordinateNode final : public Node {
 public:
  struct Curve {
    Vec e, p0, b, a;
    Expr profile;
    double y0 = 0.0, y1 = 0.0;
    double slope = 0.0;
  };

  explicit CurveCoordinateNode(Curve c) : Node(2), c_(std::move(c)) {
    require(c_.profile->dim() == 1, "curve coordinate needs a one-variable profile");
    require(c_.y0 < c_.y1, "curve coordinate needs a nondegenerate parameter run");
    ep_ = perp2(c_.e);
    qa_ = q(c_.y0);
    qb_ = q(c_.y1);
    require(qa_ != qb_, "curve coordinate: curve has zero extent across the axis");
    orient_ = qb_ > qa_ ? 1 : -1;
    ha_ = h(c_.y0);
    hb_ = h(c_.y1);
    fa_ = slope_at(c_.y0);
    fb_ = slope_at(c_.y1);
  }

  double value(const double* x) const override {
    double u = x[0] * ep_[0] + x[1] * ep_[1];
    double F, Fp;
    eval_F(u, F, Fp);
    return x[0] * c_.e[0] + x[1] * c_.e[1] - F;
  }
  double value_grad(const double* x, double* g) const override {
    double u = x[0] * ep_[0] + x[1] * ep_[1];
    double F, Fp;
    eval_F(u, F, Fp);
    g[0] = c_.e[0] - Fp * ep_[0];
    g[1] = c_.e[1] - Fp * ep_[1];
    return x[0] * c_.e[0] + x[1] * c_.e[1] - F;
  }
  Interval range(const Box& bx) const override {
    Interval X = Interval(bx.lo[0], bx.hi[0]) * Interval(c_.e[0]) + Interval(bx.lo[1], bx.hi[1]) * Interval(c_.e[1]);
    Interval U = Interval(bx.lo[0], bx.hi[0]) * Interval(ep_[0]) + Interval(bx.lo[1], bx.hi[1]) * Interval(ep_[1]);
    double mid = 0.5 * (U.lo + U.hi), rad = 0.5 * (U.hi - U.lo);
    double F, Fp;
    eval_F(mid, F, Fp);
    Interval Fr = widen(Interval(F - c_.slope * rad - 1e-15 * (1.0 + std::abs(F)), F + c_.slope * rad + 1e-15 * (1.0 + std::abs(F))));
    return X - Fr;
  }
  void grad_range(const Box&, Interval* out) const override {
    Interval S(-c_.slope, c_.slope);
    out[0] = Interval(c_.e[0]) - S * Interval(ep_[0]);
    out[1] = Interval(c_.e[1]) - S * Interval(ep_[1]);
  }
  // e and e_perp are orthonormal, so |grad s| = sqrt(1 + F'^2)
  double grad_bound(const Box&) const override { return widen(Interval(std::sqrt(1.0 + c_.slope * c_.slope))).hi; }
  Json to_json() const override {
    return Json{{"op", "curve_coord"}, {"d", 2}, {"e", c_.e}, {"p0", c_.p0}, {"b", c_.b}, {"a", c_.a},
                {"profile", c_.profile->to_json()}, {"y0", c_.y0}, {"y1", c_.y1}, {"slope", c_.slope}};
  }
  static Expr from_json(const Json& j) {
    Curve c{j.at("e").get<Vec>(), j.at("p0").get<Vec>(), j.at("b").get<Vec>(), j.at("a").get<Vec>(),
            expr_from_json(j.at("profile")), j.at("y0").get<double>(), j.at("y1").get<double>(), j.at("slope").get<double>()};
    return std::make_shared<CurveCoordinateNode>(std::move(c));
  }
  const Curve& curve() const { return c_; }

 private:
  double comp(double y, const Vec& dir) const {
    double p = c_.profile->value(&y);
    return dot(c_.p0, dir) + y * dot(c_.b, dir) + p * dot(c_.a, dir);
  }
  double q(double y) const { return comp(y, ep_); }
  double h(double y) const { return comp(y, c_.e); }
  void derivs(double y, double& qp, double& hp) const {
    double g;
    c_.profile->value_grad(&y, &g);
    qp = dot(c_.b, ep_) + g * dot(c_.a, ep_);
    hp = dot(c_.b, c_.e) + g * dot(c_.a, c_.e);
  }
  double slope_at(double y) const {
    double qp, hp;
    derivs(y, qp, hp);
    return hp / qp;
  }
  // parameter y with q(y) = u, for u between qa and qb
  double invert(double u) const {
    double a = c_.y0, b = c_.y1;
    double y = a + (b - a) * (u - qa_) / (qb_ - qa_);
    const double tol = 4e-16 * (1.0 + std::abs(u));
    for (int it = 0; it < 200; ++it) {
      double f = orient_ * (q(y) - u);
      if (std::abs(f) <= tol) return y;
      if (f > 0) b = y;
      else a = y;
      double qp, hp;
      derivs(y, qp, hp);
      double yn = y - orient_ * f / qp;
      y = (yn > a && yn < b) ? yn : 0.5 * (a + b);
      if (b - a <= 1e-16 * (1.0 + std::abs(y))) return y;
    }
    return y;
  }
  void eval_F(double u, double& F, double& Fp) const {
    const double ulo = orient_ > 0 ? qa_ : qb_, uhi = orient_ > 0 ? qb_ : qa_;
    if (u <= ulo || u >= uhi) {
      bool at_a = (u <= ulo) == (orient_ > 0);
      double qe = at_a ? qa_ : qb_, he = at_a ? ha_ : hb_, fe = at_a ? fa_ : fb_;
      F = he + fe * (u - qe);
      Fp = fe;
      return;
    }
    double y = invert(u);
    F = h(y);
    Fp = slope_at(y);
  }

  Curve c_;
  Vec ep_;
  double qa_ = 0, qb_ = 0, ha_ = 0, hb_ = 0, fa_ = 0, fb_ = 0;
  int orient_ = 1;
};

inline const bool kCurveCoordinateRegistered = (register_node_reader("curve_coord", CurveCoordinateNode::from_json), true);

// s(x) with s = 0 on the carrier, grad s . e = 1 and |grad s - (grad s . e) e| <= slope.
inline Expr transverse_coordinate(const GraphCarrier& g, const Certificate& cert) {
  require(cert.ok && cert.kind == Certificate::Kind::Graph, "transverse_coordinate needs a valid graph certificate");
  const Vec& e = cert.cone.axis;
  if (g.d == 2) {
    CurveCoordinateNode::Curve c{e, g.place.apply(g.origin), g.place.linear(g.tangent[0]), g.place.linear(g.axis),
                                 g.profile, cert.y0, cert.y1, cert.slope};
    return std::make_shared<CurveCoordinateNode>(std::move(c));
  }
  require(cert.planar_hyperplane, "width for curved graphs in d >= 3 is not supported; use an affine profile");
  Vec y = g.domain.center();
  std::vector<Vec> in = g.tangent_vectors(y.data());
  in.push_back(e);
  std::vector<Vec> q = orthonormalize(in);
  Vec n = q.back();
  double ne = dot(n, e);
  require(ne != 0.0, "hyperplane contains the cone axis");
  Vec grad(g.d);
  for (int k = 0; k < g.d; ++k) grad[k] = n[k] / ne;
  Vec x0 = g.point(y.data());
  return make_affine(grad, -dot(grad, x0));
}

// Slope-1 profile over the union of the given intervals. Intervals closer
// than zeta/(16 count) are merged and ramps take at most 0.45 of each gap.
inline std::shared_ptr<const PlateauFn> plateau_over(std::vector<std::pair<double, double>> iv, double zeta, const std::string& who) {
  require(!iv.empty(), who + ": no intervals");
  std::sort(iv.begin(), iv.end());
  const double join = zeta / (16.0 * static_cast<double>(iv.size()));
  std::vector<std::pair<double, double>> merged;
  for (const auto& [l, r] : iv) {
    if (!merged.empty() && l <= merged.back().second + join) merged.back().second = std::max(merged.back().second, r);
    else merged.push_back({l, r});
  }
  const double wmax = zeta / (8.0 * static_cast<double>(merged.size()));
  std::vector<PlateauFn::Piece> pieces;
  for (size_t k = 0; k < merged.size(); ++k) {
    double wl = k == 0 ? wmax : std::min(wmax, 0.45 * (merged[k].first - merged[k - 1].second));
    double wr = k + 1 == merged.size() ? wmax : std::min(wmax, 0.45 * (merged[k + 1].first - merged[k].second));
    pieces.push_back({merged[k].first, merged[k].second, wl, wr});
  }
  auto H = std::make_shared<PlateauFn>(std::move(pieces));
  if (!(H->rise() <= zeta)) throw Error(who + ": profile rise " + fmt_g(H->rise()) + " exceeds zeta " + fmt_g(zeta));
  return H;
}

struct WidthFunction {
  ScalarField phi;
  Cone cone;
  AtomCloud target;
  double zeta = 0.0;
  double transverse_bound = 0.0;  // certified sup of |d_v phi|, v orthogonal to e
  int generation = -1;            // IFS cover generation, -1 for graphs
};

// phi = P(s - c) with P a single slope-1 plateau of half-width zeta/4. The
// centre c is the midpoint of s over the target as evaluated, which absorbs the
// rounding of s on atoms once zeta drops towards the ulp of the coordinates.
inline WidthFunction width_from_coordinate(const Expr& s, double slope, const Cone& cone, const AtomCloud& E, double zeta) {
  require(zeta > 0.0 && std::isfinite(zeta), "width function needs zeta > 0");
  require(!E.empty(), "width_for_graph: empty target");
  auto P = plateau_profile(zeta);
  const double plateau = zeta / 4.0;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (size_t i = 0; i < E.size(); ++i) {
    double v = s->value(E.point(i));
    double scale = 1.0 + norm(E.point(i), E.d);
    if (!(std::abs(v) <= std::max(0.9 * plateau, kOffCarrierTol * scale)))
      throw Error("width_for_graph: target atom " + std::to_string(E.id[i]) + " is off the carrier (|s| = " + fmt_g(std::abs(v)) + ")");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  WidthFunction w;
  if (hi - lo <= 1.8 * plateau) {
    const double c = 0.5 * (lo + hi);
    w.phi = {make_apply(P, c == 0.0 ? s : make_sum(s, make_const(s->dim(), -c))), whole_space(s->dim())};
  } else {
    // rounding of s across the target exceeds the plateau: one short plateau per evaluated value
    std::vector<std::pair<double, double>> iv;
    const double h = zeta / (16.0 * static_cast<double>(E.size()));
    for (size_t i = 0; i < E.size(); ++i) {
      double v = s->value(E.point(i));
      iv.push_back({v - h, v + h});
    }
    w.phi = {make_apply(plateau_over(std::move(iv), zeta, "width_for_graph"), s), whole_space(s->dim())};
  }
  w.cone = cone;
  w.target = E;
  w.zeta = zeta;
  w.transverse_bound = slope;
  return w;
}

inline WidthFunction width_for_graph(const Certificate& cert, const GraphCarrier& g, const AtomCloud& E, double zeta) {
  return width_from_coordinate(transverse_coordinate(g, cert), cert.slope, cert.cone, E, zeta);
}

// Smallest n with decay^n * base_length <= zeta / 2.
inline int ifs_cover_generation(const Certificate& cert, double zeta) {
  int n = 0;
  while (cert.cover_length(n) > zeta / 2.0) {
    ++n;
    if (n > 100000) break;
  }
  return n;
}

// phi = H(x.e) where H' is 1 on intervals around the projected atoms and
// ramps to 0 inside the gaps. Each atom of generation g carries the
// projection of its cell, shrunk by decay^(n-g) when the cover generation n
// exceeds g, so the total plateau length follows the certified decay law.
inline WidthFunction width_for_ifs(const Certificate& cert, const AtomCloud& E, double zeta, int cover_cap = 200) {
  require(cert.ok && cert.kind == Certificate::Kind::Ifs, "width_for_ifs needs a valid IFS certificate");
  require(zeta > 0.0 && std::isfinite(zeta), "width function needs zeta > 0");
  require(!E.empty(), "width_for_ifs: empty target");
  const Vec& e = cert.cone.axis;
  const int n = ifs_cover_generation(cert, zeta);
  if (n > cover_cap)
    throw Error("width_for_ifs: zeta = " + std::to_string(zeta) + " requires cover generation " + std::to_string(n) + " > cap " + std::to_string(cover_cap));

  const double floor_h = zeta / (16.0 * static_cast<double>(E.size()));
  // projections go through the same node phi evaluates, so the rounding agrees
  const Expr proj = make_affine(e, 0.0);
  std::vector<std::pair<double, double>> iv;
  for (size_t i = 0; i < E.size(); ++i) {
    double p = proj->value(E.point(i));
    int g = static_cast<int>(E.par(i)[1]);
    double half = 0.5 * E.par(i)[0] * cert.base_length;
    if (n > g) half *= std::pow(cert.decay, n - g);
    half = std::max(half, floor_h);
    iv.push_back({p - half, p + half});
  }
  auto H = plateau_over(std::move(iv), zeta, "width_for_ifs");

  WidthFunction w;
  w.phi = {make_apply(H, proj), whole_space(E.d)};
  w.cone = cert.cone;
  w.target = E;
  w.zeta = zeta;
  w.transverse_bound = 0.0;
  w.generation = n;
  return w;
}

// Per-group width construction: graph groups share one transverse
// coordinate and only the plateau scale changes with zeta.
struct WidthFactory {
  Certificate cert;
  Expr coordinate;  // graphs only

  static WidthFactory for_carrier(const Carrier& car, const Certificate& cert) {
    WidthFactory f{cert, nullptr};
    if (auto g = std::get_if<GraphCarrier>(&car)) f.coordinate = transverse_coordinate(*g, cert);
    return f;
  }
  WidthFunction build(const AtomCloud& E, double zeta) const {
    if (coordinate) return width_from_coordinate(coordinate, cert.slope, cert.cone, E, zeta);
    return width_for_ifs(cert, E, zeta);
  }
  double transverse_bound() const { return coordinate ? cert.slope : 0.0; }
};

// Checks (i)-(iii), |D phi| <= c_alpha and exactness on the target, on a grid
// over the target's neighbourhood plus points threaded through the slope layer
// around each target atom.
inline Report verify_width(const WidthFunction& w, int grid_resolution, uint64_t seed = 3) {
  const int d = w.phi.dim();
  const Vec& e = w.cone.axis;
  const double ta = 1.0 / std::tan(w.cone.half_angle);
  const double ca = c_alpha(w.cone.half_angle);
  Rng rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);

  Worst phi_hi, phi_lo, de_hi, de_lo, trans, full, exact;
  std::array<double, kMaxDim> g{};
  auto probe = [&](const double* x) {
    double v = w.phi.value_grad(x, g.data());
    double de = dot(g.data(), e.data(), d);
    double t2 = 0.0, f2 = 0.0;
    for (int k = 0; k < d; ++k) {
      double tk = g[k] - de * e[k];
      t2 += tk * tk;
      f2 += g[k] * g[k];
    }
    phi_hi.offer(v, x, d);
    phi_lo.offer(-v, x, d);
    de_hi.offer(de, x, d);
    de_lo.offer(-de, x, d);
    trans.offer(std::sqrt(t2), x, d);
    full.offer(std::sqrt(f2), x, d);
  };

  Box bb = w.target.empty() ? Box(Vec(d, -1.0), Vec(d, 1.0)) : w.target.bbox();
  bb = bb.inflated(std::max({w.zeta, 0.1 * bb.diameter(), 1e-3}));
  Vec x(d);
  if (d == 2) {
    for (int i = 0; i <= grid_resolution; ++i)
      for (int j = 0; j <= grid_resolution; ++j) {
        x[0] = bb.lo[0] + (bb.hi[0] - bb.lo[0]) * i / grid_resolution;
        x[1] = bb.lo[1] + (bb.hi[1] - bb.lo[1]) * j / grid_resolution;
        probe(x.data());
      }
  } else {
    const long n = static_cast<long>(grid_resolution) * grid_resolution;
    for (long s = 0; s < n; ++s) {
      for (int k = 0; k < d; ++k) x[k] = bb.lo[k] + (bb.hi[k] - bb.lo[k]) * U(rng);
      probe(x.data());
    }
  }
  // the slope layer has thickness ~zeta; thread it along e at every target atom
  const size_t stride = std::max<size_t>(1, w.target.size() / 2000);
  for (size_t i = 0; i < w.target.size(); i += stride) {
    for (int s = -20; s <= 20; ++s) {
      for (int k = 0; k < d; ++k) x[k] = w.target.point(i)[k] + (s / 20.0) * 1.1 * w.zeta * e[k];
      probe(x.data());
    }
  }
  for (size_t i = 0; i < w.target.size(); ++i) {
    w.phi.value_grad(w.target.point(i), g.data());
    exact.offer(std::abs(dot(g.data(), e.data(), d) - 1.0), w.target.point(i), d);
  }

  Report r;
  r.upper("phi_max", phi_hi.value, w.zeta + 1e-9, phi_hi.at);
  r.upper("phi_min_neg", phi_lo.value, 1e-12, phi_lo.at);
  r.upper("de_phi_max", de_hi.value, 1.0 + 1e-9, de_hi.at);
  r.upper("de_phi_min_neg", de_lo.value, 1e-9, de_lo.at);
  r.upper("transverse_max", trans.value, ta + 1e-9, trans.at);
  r.upper("grad_norm_max", full.value, ca + 1e-9, full.at);
  if (!w.target.empty()) r.upper("exactness_on_target", exact.value, 1e-9, exact.at);
  return r;
}

}  // namespace lusin
