#pragma once

#include <cfloat>

#include <variant>

#include "lusin/cone.hpp"
#include "lusin/parser.hpp"

namespace lusin {

inline constexpr size_t kAtomBudget = 4000000;
inline constexpr double kQuadratureTol = 1e-9;

// x -> A x + c, applied after a carrier's own parametrization.
struct Placement {
  int d = 0;
  std::vector<double> A;  // row-major
  Vec c;

  static Placement identity(int d) {
    Placement p{d, std::vector<double>(d * d, 0.0), Vec(d, 0.0)};
    for (int k = 0; k < d; ++k) p.A[k * d + k] = 1.0;
    return p;
  }
  bool is_identity() const {
    for (int i = 0; i < d; ++i) {
      if (c[i] != 0.0) return false;
      for (int k = 0; k < d; ++k)
        if (A[i * d + k] != (i == k ? 1.0 : 0.0)) return false;
    }
    return true;
  }
  Vec linear(const Vec& v) const {
    Vec o(d, 0.0);
    for (int i = 0; i < d; ++i)
      for (int k = 0; k < d; ++k) o[i] += A[i * d + k] * v[k];
    return o;
  }
  Vec apply(const Vec& v) const {
    Vec o = linear(v);
    for (int i = 0; i < d; ++i) o[i] += c[i];
    return o;
  }
  Vec transpose_apply(const Vec& v) const {
    Vec o(d, 0.0);
    for (int i = 0; i < d; ++i)
      for (int k = 0; k < d; ++k) o[k] += A[i * d + k] * v[i];
    return o;
  }
  // solves A y = x - c by Gaussian elimination with partial pivoting
  Vec invert(const Vec& x) const {
    std::vector<double> m = A;
    Vec b(d);
    for (int i = 0; i < d; ++i) b[i] = x[i] - c[i];
    for (int col = 0; col < d; ++col) {
      int p = col;
      for (int r = col + 1; r < d; ++r)
        if (std::abs(m[r * d + col]) > std::abs(m[p * d + col])) p = r;
      require(m[p * d + col] != 0.0, "placement map is singular");
      if (p != col) {
        for (int k = 0; k < d; ++k) std::swap(m[p * d + k], m[col * d + k]);
        std::swap(b[p], b[col]);
      }
      for (int r = col + 1; r < d; ++r) {
        double f = m[r * d + col] / m[col * d + col];
        for (int k = col; k < d; ++k) m[r * d + k] -= f * m[col * d + k];
        b[r] -= f * b[col];
      }
    }
    Vec y(d);
    for (int i = d - 1; i >= 0; --i) {
      double s = b[i];
      for (int k = i + 1; k < d; ++k) s -= m[i * d + k] * y[k];
      y[i] = s / m[i * d + i];
    }
    return y;
  }
  // composition: (this after inner)
  Placement after(const Placement& inner) const {
    Placement p{d, std::vector<double>(d * d, 0.0), apply(inner.c)};
    for (int i = 0; i < d; ++i)
      for (int k = 0; k < d; ++k)
        for (int m = 0; m < d; ++m) p.A[i * d + k] += A[i * d + m] * inner.A[m * d + k];
    return p;
  }
};

// Orthonormal completion of `axis`: the standard vectors other than the one
// most aligned with the axis, Gram-Schmidt'ed against it.
inline std::vector<Vec> complete_basis(const Vec& axis) {
  const int d = static_cast<int>(axis.size());
  int skip = 0;
  for (int k = 1; k < d; ++k)
    if (std::abs(axis[k]) > std::abs(axis[skip])) skip = k;
  std::vector<Vec> in{axis};
  for (int k = 0; k < d; ++k)
    if (k != skip) {
      Vec e(d, 0.0);
      e[k] = 1.0;
      in.push_back(e);
    }
  std::vector<Vec> q = orthonormalize(in);
  require(static_cast<int>(q.size()) == d, "complete_basis: degenerate axis");
  return {q.begin() + 1, q.end()};
}

// Hypersurface graph: X(y) = place(origin + sum_k y_k t_k + p(y) axis) for y in `domain`.
struct GraphCarrier {
  int d = 0;
  Vec axis, origin;
  std::vector<Vec> tangent;
  Expr profile;
  std::string profile_src;
  Box domain;
  Placement place;
  double lip_profile = 0.0;

  static GraphCarrier make(Vec axis, Vec origin, Expr profile, Box domain, std::string src = "") {
    GraphCarrier g;
    g.d = static_cast<int>(axis.size());
    require(g.d >= 2, "graph carrier needs d >= 2");
    g.axis = normalized(std::move(axis));
    g.origin = std::move(origin);
    require(static_cast<int>(g.origin.size()) == g.d, "graph origin has wrong length");
    g.tangent = complete_basis(g.axis);
    g.profile = std::move(profile);
    require(g.profile->dim() == g.d - 1, "graph profile must be a function of d-1 coordinates");
    g.profile_src = std::move(src);
    g.domain = std::move(domain);
    require(g.domain.dim() == g.d - 1 && !g.domain.is_empty(), "graph domain must be a nonempty (d-1)-box");
    g.place = Placement::identity(g.d);
    g.lip_profile = g.profile->grad_bound(g.domain);
    return g;
  }

  Vec local_point(const double* y) const {
    Vec x = origin;
    double p = profile->value(y);
    for (int k = 0; k < d - 1; ++k)
      for (int i = 0; i < d; ++i) x[i] += y[k] * tangent[k][i];
    for (int i = 0; i < d; ++i) x[i] += p * axis[i];
    return x;
  }
  Vec point(const double* y) const { return place.apply(local_point(y)); }
  // placed tangent vectors (not orthonormal in general)
  std::vector<Vec> tangent_vectors(const double* y) const {
    std::array<double, kMaxDim> g{};
    profile->value_grad(y, g.data());
    std::vector<Vec> out;
    for (int k = 0; k < d - 1; ++k) {
      Vec t = tangent[k];
      for (int i = 0; i < d; ++i) t[i] += g[k] * axis[i];
      out.push_back(place.linear(t));
    }
    return out;
  }
  Subspace tangent_space(const double* y) const { return Subspace{d, orthonormalize(tangent_vectors(y))}; }
  double area_element(const double* y) const {
    std::vector<Vec> t = tangent_vectors(y);
    const int m = d - 1;
    std::vector<double> gram(m * m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) gram[i * m + j] = dot(t[i], t[j]);
    return std::sqrt(std::max(0.0, determinant(gram, m)));
  }
  // carrier parameter of a point on the carrier (exact for points on the graph)
  Vec parameter_of(const Vec& x) const {
    Vec l = place.invert(x);
    Vec y(d - 1);
    for (int k = 0; k < d - 1; ++k) {
      double s = 0.0;
      for (int i = 0; i < d; ++i) s += (l[i] - origin[i]) * tangent[k][i];
      y[k] = s;
    }
    return y;
  }
  bool is_affine() const {
    std::array<Interval, kMaxDim> g;
    profile->grad_range(domain.inflated(1.0), g.data());
    // outward rounding widens constant gradients by a few ulps
    for (int k = 0; k < d - 1; ++k)
      if (!(g[k].width() <= 64.0 * DBL_EPSILON * (1.0 + g[k].mag()))) return false;
    return true;
  }
};

// Self-similar set generated by homotheties x -> r_i x + b_i from `base_box`.
struct IFSCarrier {
  int d = 0;
  Vec ratios;
  std::vector<Vec> translations;
  Box base_box;
  Vec axis;
  int generation_cap = 12;
  Placement place;

  static IFSCarrier make(Vec ratios, std::vector<Vec> translations, Box base, Vec axis, int cap) {
    IFSCarrier c;
    c.d = base.dim();
    c.ratios = std::move(ratios);
    c.translations = std::move(translations);
    c.base_box = std::move(base);
    c.axis = normalized(std::move(axis));
    c.generation_cap = cap;
    c.place = Placement::identity(c.d);
    require(!c.ratios.empty() && c.ratios.size() == c.translations.size(), "IFS needs matching ratios and translations");
    for (double r : c.ratios) require(r > 0.0 && r < 1.0, "IFS contraction ratios must lie in (0,1)");
    for (const Vec& b : c.translations) require(static_cast<int>(b.size()) == c.d, "IFS translation has wrong length");
    require(cap >= 0, "IFS generation cap must be nonnegative");
    return c;
  }

  int maps() const { return static_cast<int>(ratios.size()); }
  double ratio_sum() const { return std::accumulate(ratios.begin(), ratios.end(), 0.0); }
  Box image_of_base(int i) const {
    Box b = base_box;
    for (int k = 0; k < d; ++k) {
      b.lo[k] = ratios[i] * base_box.lo[k] + translations[i][k];
      b.hi[k] = ratios[i] * base_box.hi[k] + translations[i][k];
    }
    return b;
  }
  // first-generation images pairwise separated along some axis
  bool open_set_condition() const {
    for (int i = 0; i < maps(); ++i)
      for (int j = i + 1; j < maps(); ++j)
        if (!(box_gap(image_of_base(i), image_of_base(j)) > 0.0)) return false;
    return true;
  }
  // length of the projection of the placed base box onto direction e
  double projected_base_length(const Vec& e) const {
    Vec at = place.transpose_apply(e);
    double s = 0.0;
    for (int k = 0; k < d; ++k) s += std::abs(at[k]) * (base_box.hi[k] - base_box.lo[k]);
    return s;
  }
};

using Carrier = std::variant<GraphCarrier, IFSCarrier>;

struct ModelMeasure {
  struct Piece {
    Carrier carrier;
    double weight = 0.0;
  };
  int d = 0;
  std::vector<Piece> pieces;

  double total_mass() const {
    double s = 0.0;
    for (const Piece& p : pieces) s += p.weight;
    return s;
  }
  void add(Carrier c, double w) {
    require(w > 0.0 && std::isfinite(w), "piece weights must be positive");
    int cd = std::visit([](const auto& x) { return x.d; }, c);
    if (d == 0) d = cd;
    require(cd == d, "pieces of a measure must share the ambient dimension");
    pieces.push_back({std::move(c), w});
  }
};

// Weighted atoms. `param` has stride d: graph atoms store their carrier
// parameter, IFS atoms store (cell scale, generation).
struct AtomCloud {
  int d = 0;
  Vec x, w, param;
  std::vector<int> piece, id;

  size_t size() const { return w.size(); }
  bool empty() const { return w.empty(); }
  const double* point(size_t i) const { return x.data() + i * d; }
  const double* par(size_t i) const { return param.data() + i * d; }
  Vec point_vec(size_t i) const { return Vec(point(i), point(i) + d); }
  double mass() const {
    double s = 0.0;
    for (double v : w) s += v;
    return s;
  }
  void push(const double* p, double weight, int pc, int ident, const double* pr) {
    x.insert(x.end(), p, p + d);
    w.push_back(weight);
    piece.push_back(pc);
    id.push_back(ident);
    param.insert(param.end(), pr, pr + d);
  }
  AtomCloud subset(const std::vector<size_t>& idx) const {
    AtomCloud c;
    c.d = d;
    for (size_t i : idx) c.push(point(i), w[i], piece[i], id[i], par(i));
    return c;
  }
  Box bbox() const {
    Box b = Box::empty(d);
    for (size_t i = 0; i < size(); ++i) b.expand(point(i));
    return b;
  }
};

// Smallest distance between two atoms at distinct positions (grid hashing).
inline double min_atom_spacing(const AtomCloud& c) {
  if (c.size() < 2) return std::numeric_limits<double>::infinity();
  Box b = c.bbox();
  double diam = std::max(b.diameter(), 1e-300);
  double best = std::numeric_limits<double>::infinity();
  // sort along the widest axis and sweep
  int ax = 0;
  for (int k = 1; k < c.d; ++k)
    if (b.hi[k] - b.lo[k] > b.hi[ax] - b.lo[ax]) ax = k;
  std::vector<size_t> ord(c.size());
  std::iota(ord.begin(), ord.end(), size_t{0});
  std::sort(ord.begin(), ord.end(), [&](size_t i, size_t j) { return c.point(i)[ax] < c.point(j)[ax]; });
  for (size_t a = 0; a < ord.size(); ++a)
    for (size_t q = a + 1; q < ord.size(); ++q) {
      double dx = c.point(ord[q])[ax] - c.point(ord[a])[ax];
      if (dx >= best) break;
      double s = 0.0;
      for (int k = 0; k < c.d; ++k) {
        double t = c.point(ord[q])[k] - c.point(ord[a])[k];
        s += t * t;
      }
      s = std::sqrt(s);
      if (s > 0.0) best = std::min(best, s);
    }
  return std::isfinite(best) ? best : diam;
}

namespace detail {

inline void sample_graph(const GraphCarrier& g, double weight, int resolution, int pc, AtomCloud& out) {
  const int m = g.d - 1;
  size_t count = 1;
  for (int k = 0; k < m; ++k) {
    count *= static_cast<size_t>(resolution);
    require(count <= kAtomBudget, "sample_atoms: resolution " + std::to_string(resolution) + " exceeds the atom budget of " + std::to_string(kAtomBudget));
  }
  std::vector<Vec> pts;
  std::vector<Vec> params;
  Vec area;
  std::array<int, kMaxDim> idx{};
  for (size_t n = 0; n < count; ++n) {
    Vec y(m);
    for (int k = 0; k < m; ++k) {
      double h = (g.domain.hi[k] - g.domain.lo[k]) / resolution;
      y[k] = g.domain.lo[k] + (idx[k] + 0.5) * h;
    }
    pts.push_back(g.point(y.data()));
    area.push_back(g.area_element(y.data()));
    params.push_back(y);
    for (int k = 0; k < m; ++k) {
      if (++idx[k] < resolution) break;
      idx[k] = 0;
    }
  }
  double total = std::accumulate(area.begin(), area.end(), 0.0);
  require(total > 0.0, "graph carrier has zero surface measure");
  for (size_t n = 0; n < count; ++n) {
    Vec pr(g.d, 0.0);
    std::copy(params[n].begin(), params[n].end(), pr.begin());
    out.push(pts[n].data(), weight * area[n] / total, pc, static_cast<int>(out.size()), pr.data());
  }
}

inline void sample_ifs(const IFSCarrier& f, double weight, int resolution, int pc, AtomCloud& out) {
  const int gen = std::min(resolution, f.generation_cap);
  const double cells = std::pow(static_cast<double>(f.maps()), gen);
  require(cells <= static_cast<double>(kAtomBudget), "sample_atoms: IFS generation " + std::to_string(gen) + " exceeds the atom budget of " + std::to_string(kAtomBudget));
  const size_t n = static_cast<size_t>(cells);
  Vec c0 = f.base_box.center();
  std::vector<int> word(gen, 0);
  for (size_t a = 0; a < n; ++a) {
    // word digits, most significant first; f_w = f_{w1} o ... o f_{wg}
    size_t t = a;
    for (int k = gen - 1; k >= 0; --k) {
      word[k] = static_cast<int>(t % f.maps());
      t /= f.maps();
    }
    Vec p = c0;
    double scale = 1.0;
    for (int k = gen - 1; k >= 0; --k) {
      int i = word[k];
      for (int q = 0; q < f.d; ++q) p[q] = f.ratios[i] * p[q] + f.translations[i][q];
      scale *= f.ratios[i];
    }
    Vec placed = f.place.apply(p);
    Vec pr(f.d, 0.0);
    pr[0] = scale;
    if (f.d > 1) pr[1] = gen;
    out.push(placed.data(), weight / cells, pc, static_cast<int>(out.size()), pr.data());
  }
}

}  // namespace detail

inline AtomCloud sample_atoms(const ModelMeasure& m, int resolution) {
  require(resolution >= 1, "sample_atoms: resolution must be >= 1");
  require(!m.pieces.empty(), "sample_atoms: measure has no pieces");
  AtomCloud c;
  c.d = m.d;
  for (size_t p = 0; p < m.pieces.size(); ++p) {
    const auto& pc = m.pieces[p];
    if (auto g = std::get_if<GraphCarrier>(&pc.carrier)) detail::sample_graph(*g, pc.weight, resolution, static_cast<int>(p), c);
    else detail::sample_ifs(std::get<IFSCarrier>(pc.carrier), pc.weight, resolution, static_cast<int>(p), c);
    require(c.size() <= kAtomBudget, "sample_atoms: total atoms exceed the atom budget of " + std::to_string(kAtomBudget));
  }
  require(std::abs(c.mass() - m.total_mass()) <= kQuadratureTol * std::max(1.0, m.total_mass()), "sample_atoms: quadrature mass mismatch");
  return c;
}

// Decomposability-bundle oracle for an atom of a sampled cloud.
inline Subspace bundle_for_atom(const ModelMeasure& m, const AtomCloud& c, size_t i) {
  const auto& pc = m.pieces.at(c.piece[i]);
  if (auto g = std::get_if<GraphCarrier>(&pc.carrier)) return g->tangent_space(c.par(i));
  return Subspace::zero(m.d);
}

namespace detail {

inline bool ifs_near(const IFSCarrier& f, const Vec& local, int depth, double tol) {
  Box b = f.base_box.inflated(tol);
  if (!b.contains(local.data())) return false;
  if (depth == 0) return true;
  for (int i = 0; i < f.maps(); ++i) {
    Vec y(f.d);
    for (int k = 0; k < f.d; ++k) y[k] = (local[k] - f.translations[i][k]) / f.ratios[i];
    if (ifs_near(f, y, depth - 1, tol / f.ratios[i])) return true;
  }
  return false;
}

}  // namespace detail

// Oracle subspace at a point, attributing the point to a piece geometrically.
inline Subspace bundle_at(const ModelMeasure& m, const Vec& x) {
  require(static_cast<int>(x.size()) == m.d && all_finite(x), "bundle_at: malformed point");
  for (const auto& pc : m.pieces) {
    if (auto g = std::get_if<GraphCarrier>(&pc.carrier)) {
      Vec y = g->parameter_of(x);
      if (!g->domain.inflated(1e-9).contains(y.data())) continue;
      Vec p = g->point(y.data());
      double e = 0.0;
      for (int k = 0; k < m.d; ++k) e = std::max(e, std::abs(p[k] - x[k]));
      if (e <= 1e-9) return g->tangent_space(y.data());
    } else {
      const IFSCarrier& f = std::get<IFSCarrier>(pc.carrier);
      if (detail::ifs_near(f, f.place.invert(x), std::min(3, f.generation_cap), 1e-9)) return Subspace::zero(m.d);
    }
  }
  throw Error("bundle_at: point is not attributable to any piece of the measure");
}

// Certified slope of a planar curve read as a graph over the line e^perp:
// sup |h'| / inf |q'| on [y0, y1], with q = X.e^perp and h = X.e.
struct CurveSlope {
  bool ok = false;
  double slope = 0.0;
  int orientation = 0;  // sign of q'
  double witness = 0.0;
};

inline Vec perp2(const Vec& e) { return {-e[1], e[0]}; }

inline CurveSlope certify_curve_slope(const GraphCarrier& g, const Vec& e, double y0, double y1, double limit) {
  require(g.d == 2, "curve slope certificate is planar");
  const Vec ep = perp2(e);
  const Vec B = g.place.linear(g.tangent[0]);
  const Vec A = g.place.linear(g.axis);
  const double bq = dot(B, ep), aq = dot(A, ep), bh = dot(B, e), ah = dot(A, e);
  CurveSlope out;
  out.ok = true;
  std::vector<std::pair<std::pair<double, double>, int>> stack{{{y0, y1}, 0}};
  while (!stack.empty()) {
    auto [iv, depth] = stack.back();
    stack.pop_back();
    Interval dp;
    Box yb(Vec{iv.first}, Vec{iv.second});
    g.profile->grad_range(yb, &dp);
    Interval q = Interval(bq) + dp * Interval(aq);
    Interval h = Interval(bh) + dp * Interval(ah);
    double s = q.contains_zero() ? std::numeric_limits<double>::infinity() : widen(Interval(h.mag() / q.mig())).hi;
    int sign = q.contains_zero() ? 0 : (q.lo > 0 ? 1 : -1);
    if (s <= limit && sign != 0 && (out.orientation == 0 || out.orientation == sign)) {
      out.orientation = sign;
      out.slope = std::max(out.slope, s);
      continue;
    }
    if (depth >= 30 || sign * out.orientation < 0) {
      out.ok = false;
      out.witness = 0.5 * (iv.first + iv.second);
      out.slope = std::max(out.slope, s);
      return out;
    }
    double mid = 0.5 * (iv.first + iv.second);
    stack.push_back({{mid, iv.second}, depth + 1});
    stack.push_back({{iv.first, mid}, depth + 1});
  }
  return out;
}

struct Certificate {
  enum class Kind { Graph, Ifs } kind = Kind::Graph;
  bool ok = false;
  std::string reason;
  Cone cone;
  // graph: slope bound of the carrier read over the cone axis' orthogonal complement
  double slope = 0.0;
  double y0 = 0.0, y1 = 0.0;
  int orientation = 0;
  bool planar_hyperplane = false;
  // ifs: cover length after n generations is decay^n * base_length
  double decay = 0.0;
  double base_length = 0.0;

  double cover_length(int n) const { return std::pow(decay, n) * base_length; }
};

// Tilt of an affine hyperplane graph against axis e: returns tan of the
// angle between its normal and e (the slope over e^perp), or +inf if the
// plane contains a direction of the cone.
inline double hyperplane_slope(const GraphCarrier& g, const Vec& e) {
  Vec y = g.domain.center();
  std::vector<Vec> t = g.tangent_vectors(y.data());
  std::vector<Vec> in = t;
  Vec guess = e;
  in.push_back(guess);
  std::vector<Vec> q = orthonormalize(in);
  if (static_cast<int>(q.size()) < g.d) return std::numeric_limits<double>::infinity();
  Vec n = q.back();
  double c = std::abs(dot(n, e));
  if (c <= 0.0) return std::numeric_limits<double>::infinity();
  return std::sqrt(std::max(0.0, 1.0 - c * c)) / c;
}

inline Certificate cone_null_certificate(const GraphCarrier& g, const Cone& c, double y0, double y1) {
  Certificate cert;
  cert.kind = Certificate::Kind::Graph;
  cert.cone = c;
  const double limit = 1.0 / std::tan(c.half_angle);
  if (g.d == 2) {
    CurveSlope cs = certify_curve_slope(g, c.axis, y0, y1, limit);
    cert.slope = cs.slope;
    cert.orientation = cs.orientation;
    cert.y0 = y0;
    cert.y1 = y1;
    cert.ok = cs.ok;
    if (!cs.ok) {
      bool own_axis = std::abs(std::abs(dot(g.place.linear(g.axis), c.axis)) - 1.0) < 1e-12 && g.place.is_identity();
      cert.reason = own_axis ? "lip_profile > 1/tan(alpha): slope " + std::to_string(cs.slope) + " exceeds " + std::to_string(limit)
                             : "tangent not transverse to the cone near parameter " + std::to_string(cs.witness) + " (slope " + std::to_string(cs.slope) + " > " + std::to_string(limit) + ")";
    }
    return cert;
  }
  if (g.is_affine()) {
    cert.planar_hyperplane = true;
    cert.slope = hyperplane_slope(g, c.axis);
    cert.ok = cert.slope <= limit;
    if (!cert.ok) cert.reason = "hyperplane not transverse to the cone: slope " + std::to_string(cert.slope) + " > " + std::to_string(limit);
    return cert;
  }
  bool own_axis = g.place.is_identity() && std::abs(dot(g.axis, c.axis) - 1.0) < 1e-12;
  if (own_axis) {
    cert.slope = g.lip_profile;
    cert.ok = g.lip_profile <= limit;
    if (!cert.ok) cert.reason = "lip_profile > 1/tan(alpha): " + std::to_string(g.lip_profile) + " > " + std::to_string(limit);
    return cert;
  }
  cert.reason = "curved graph in d >= 3 is only supported with the cone axis equal to the carrier axis";
  return cert;
}

inline Certificate cone_null_certificate(const GraphCarrier& g, const Cone& c) {
  return cone_null_certificate(g, c, g.domain.lo[0], g.domain.hi[0]);
}

inline Certificate cone_null_certificate(const IFSCarrier& f, const Cone& c) {
  Certificate cert;
  cert.kind = Certificate::Kind::Ifs;
  cert.cone = c;
  cert.decay = f.ratio_sum();
  cert.base_length = f.projected_base_length(c.axis);
  cert.ok = cert.decay < 1.0;
  if (!cert.ok) cert.reason = "sum of contraction ratios " + std::to_string(cert.decay) + " is not < 1 along the cone axis";
  else if (!f.open_set_condition()) {
    cert.ok = false;
    cert.reason = "first-generation images of the base box overlap";
  }
  return cert;
}

inline Certificate cone_null_certificate(const Carrier& car, const Cone& c) {
  return std::visit([&](const auto& x) { return cone_null_certificate(x, c); }, car);
}

struct DropResult {
  AtomCloud kept;
  double dropped_mass = 0.0;
  std::vector<int> dropped_ids;
};

// Drops every atom flagged by `pred`, smallest weights first, and fails if
// the flagged mass reaches the budget.
inline DropResult inner_regular_refine(const AtomCloud& c, double budget, const std::function<bool(size_t)>& pred,
                                       const std::string& name = "predicate") {
  require(budget > 0.0, "inner_regular_refine: budget must be positive");
  std::vector<size_t> flagged, kept;
  for (size_t i = 0; i < c.size(); ++i) (pred(i) ? flagged : kept).push_back(i);
  std::stable_sort(flagged.begin(), flagged.end(), [&](size_t a, size_t b) { return c.w[a] < c.w[b]; });
  DropResult r;
  for (size_t i : flagged) {
    r.dropped_mass += c.w[i];
    r.dropped_ids.push_back(c.id[i]);
  }
  if (!(r.dropped_mass < budget))
    throw Error("inner_regular_refine: " + name + " must drop mass " + std::to_string(r.dropped_mass) + " >= budget " + std::to_string(budget));
  r.kept = c.subset(kept);
  return r;
}

struct ConeNullReport {
  std::vector<double> thickening;
  std::vector<double> estimate;
  bool decays = false;
};

// Monte-Carlo estimate of the length of cone-directed polygonal curves inside
// a thickened carrier, for a decreasing sequence of thickenings.
inline ConeNullReport empirical_cone_null_test(const Carrier& car, const Cone& c, int trials, uint64_t seed, int levels = 6) {
  Rng rng(seed);
  ModelMeasure mm;
  mm.add(car, 1.0);
  AtomCloud starts = sample_atoms(mm, 200);
  Box bb = starts.bbox();
  const int d = mm.d;
  const double scale = std::max(bb.diameter(), 1e-3);
  const double seg = 0.1 * scale;
  std::uniform_real_distribution<double> U(0.0, 1.0);

  auto inside = [&](const Vec& x, double th) -> bool {
    if (auto g = std::get_if<GraphCarrier>(&car)) {
      Vec y = g->parameter_of(x);
      if (!g->domain.inflated(th).contains(y.data())) return false;
      for (int k = 0; k < d - 1; ++k) y[k] = std::clamp(y[k], g->domain.lo[k], g->domain.hi[k]);
      Vec p = g->point(y.data());
      double s = 0.0;
      for (int k = 0; k < d; ++k) s += (p[k] - x[k]) * (p[k] - x[k]);
      return std::sqrt(s) <= th;
    }
    const IFSCarrier& f = std::get<IFSCarrier>(car);
    double rmax = *std::max_element(f.ratios.begin(), f.ratios.end());
    double len = std::max(f.base_box.diameter(), 1e-12);
    int gen = 0;
    while (gen < 40 && std::pow(rmax, gen) * len > th) ++gen;
    return detail::ifs_near(f, f.place.invert(x), gen, th);
  };
  auto cone_dir = [&]() -> Vec {
    if (U(rng) < 0.25) return c.axis;
    for (;;) {
      Vec v = random_unit(d, rng);
      if (dot(v, c.axis) >= std::cos(c.half_angle)) return v;
      // reflect into the cone's half-space to raise acceptance
      if (dot(v, c.axis) < 0)
        for (double& t : v) t = -t;
      if (dot(v, c.axis) >= std::cos(c.half_angle)) return v;
    }
  };

  ConeNullReport rep;
  double th0 = 0.05 * scale;
  std::vector<std::vector<Vec>> curves;
  for (int t = 0; t < trials; ++t) {
    size_t a = static_cast<size_t>(U(rng) * starts.size()) % starts.size();
    Vec x = starts.point_vec(a);
    std::vector<Vec> poly{x};
    for (int s = 0; s < 4; ++s) {
      Vec v = cone_dir();
      for (int k = 0; k < d; ++k) x[k] += seg * v[k];
      poly.push_back(x);
    }
    curves.push_back(std::move(poly));
  }
  for (int lv = 0; lv < levels; ++lv) {
    double th = th0 * std::pow(0.5, lv);
    double step = th / 4.0;
    double total = 0.0;
    for (const auto& poly : curves) {
      for (size_t s = 0; s + 1 < poly.size(); ++s) {
        int n = static_cast<int>(std::ceil(seg / step));
        double h = seg / n;
        for (int i = 0; i < n; ++i) {
          Vec p(d);
          double u = (i + 0.5) / n;
          for (int k = 0; k < d; ++k) p[k] = poly[s][k] + u * (poly[s + 1][k] - poly[s][k]);
          if (inside(p, th)) total += h;
        }
      }
    }
    rep.thickening.push_back(th);
    rep.estimate.push_back(total / trials);
  }
  rep.decays = rep.estimate.front() == 0.0 || rep.estimate.back() <= 0.25 * rep.estimate.front();
  return rep;
}

}  // namespace lusin
