#pragma once

#include <map>

#include "lusin/diff.hpp"
#include "lusin/scheme.hpp"

namespace lusin {

inline double deltatilde_at(double alpha, double delta) { return ((1.0 + delta) / c_alpha(alpha) - 1.0) / 2.0; }

struct AlphaChoice {
  double alpha = 0.0;
  double deltatilde = 0.0;
};

// Scans alpha down from pi/2 in quarter degrees and keeps the smallest angle
// whose deltatilde still reaches 3/4 of its supremum min(delta/2, 1/2): the
// inequality c_alpha (1 + deltatilde) < 1 + delta then holds with a
// deltatilde close to the best available, while the cones stay as wide apart
// as possible so the direction net stays small.
inline AlphaChoice pick_alpha_deltatilde(double delta) {
  require(delta > 0.0 && std::isfinite(delta), "pick_alpha_deltatilde: delta must be positive");
  const double target = 0.75 * std::min(delta / 2.0, 0.5);
  AlphaChoice best;
  for (int q = 359; q >= 1; --q) {
    double a = q * 0.25 * kPi / 180.0;
    double dt = deltatilde_at(a, delta);
    if (!(dt > 0.0 && c_alpha(a) * (1.0 + dt) < 1.0 + delta)) break;
    if (dt < target && best.alpha > 0.0) break;
    best = {a, dt};
  }
  require(best.alpha > 0.0, "pick_alpha_deltatilde: no admissible angle");
  return best;
}

struct Group {
  int direction = -1;
  Vec v;
  int piece = -1;
  Cluster atoms;  // indices into the sampled cloud
  Certificate cert;
};

struct Partition {
  std::vector<Group> groups;
  std::vector<int> direction_of;  // per atom, -1 when no net direction is transverse
  double dropped_mass = 0.0;
  std::vector<int> dropped_ids;
};

namespace detail {

inline Certificate certify_group(const ModelMeasure& m, const AtomCloud& C, Group& g, const Cone& cone, std::vector<size_t>& dropped) {
  const Carrier& car = m.pieces[g.piece].carrier;
  auto gc = std::get_if<GraphCarrier>(&car);
  if (!gc || gc->d != 2) {
    Certificate c = cone_null_certificate(car, cone);
    if (!c.ok) {
      dropped.insert(dropped.end(), g.atoms.begin(), g.atoms.end());
      g.atoms.clear();
    }
    return c;
  }
  // shrink the run from the end nearer the failing parameter
  while (!g.atoms.empty()) {
    double y0 = C.par(g.atoms.front())[0], y1 = C.par(g.atoms.back())[0];
    if (y0 == y1) {
      double h = 1e-9 * (1.0 + std::abs(y0));
      y0 -= h;
      y1 += h;
    }
    Certificate c = cone_null_certificate(*gc, cone, y0, y1);
    if (c.ok) return c;
    CurveSlope cs = certify_curve_slope(*gc, cone.axis, y0, y1, 1.0 / std::tan(cone.half_angle));
    if (cs.witness - y0 < y1 - cs.witness) {
      dropped.push_back(g.atoms.front());
      g.atoms.erase(g.atoms.begin());
    } else {
      dropped.push_back(g.atoms.back());
      g.atoms.pop_back();
    }
  }
  Certificate none;
  none.reason = "run emptied while certifying";
  return none;
}

}  // namespace detail

// First-index assignment of every atom to a net direction transverse to its
// bundle, then grouping by (direction, piece) and, for planar graphs, by
// contiguous parameter run so each group has one cone-null certificate.
inline Partition partition_by_direction(const AtomCloud& C, const ModelMeasure& m, const DirectionNet& net, double budget) {
  require(budget > 0.0, "partition_by_direction: budget must be positive");
  Partition p;
  p.direction_of.resize(C.size());
  std::vector<size_t> dropped;
  for (size_t i = 0; i < C.size(); ++i) {
    p.direction_of[i] = first_transverse(net, bundle_for_atom(m, C, i));
    if (p.direction_of[i] < 0) dropped.push_back(i);
  }
  std::map<std::tuple<int, int, double>, Group> keyed;
  for (size_t pc = 0; pc < m.pieces.size(); ++pc) {
    std::vector<size_t> mine;
    for (size_t i = 0; i < C.size(); ++i)
      if (C.piece[i] == static_cast<int>(pc) && p.direction_of[i] >= 0) mine.push_back(i);
    auto gc = std::get_if<GraphCarrier>(&m.pieces[pc].carrier);
    const bool runs = gc && gc->d == 2;
    if (runs) {
      // order by parameter; atoms of the piece with no direction break runs too
      std::vector<size_t> all;
      for (size_t i = 0; i < C.size(); ++i)
        if (C.piece[i] == static_cast<int>(pc)) all.push_back(i);
      std::stable_sort(all.begin(), all.end(), [&](size_t a, size_t b) { return C.par(a)[0] < C.par(b)[0]; });
      Group cur;
      auto flush = [&] {
        if (!cur.atoms.empty()) keyed[{cur.direction, cur.piece, C.par(cur.atoms.front())[0]}] = cur;
        cur = Group{};
      };
      for (size_t i : all) {
        int j = p.direction_of[i];
        if (j != cur.direction) flush();
        if (j < 0) continue;
        cur.direction = j;
        cur.piece = static_cast<int>(pc);
        cur.atoms.push_back(i);
      }
      flush();
    } else {
      for (size_t i : mine) {
        Group& g = keyed[{p.direction_of[i], static_cast<int>(pc), 0.0}];
        g.direction = p.direction_of[i];
        g.piece = static_cast<int>(pc);
        g.atoms.push_back(i);
      }
    }
  }
  for (auto& [key, g] : keyed) {
    g.v = net.directions[g.direction];
    g.cert = detail::certify_group(m, C, g, Cone(g.v, net.half_angle), dropped);
    if (!g.atoms.empty()) p.groups.push_back(std::move(g));
  }
  std::sort(dropped.begin(), dropped.end());
  for (size_t i : dropped) {
    p.dropped_mass += C.w[i];
    p.dropped_ids.push_back(C.id[i]);
  }
  if (!(p.dropped_mass < budget))
    throw Error("partition_by_direction: non-transverse or uncertifiable atoms carry mass " + std::to_string(p.dropped_mass) +
                " >= budget " + std::to_string(budget) + " (net and bundle oracle disagree)");
  return p;
}

struct LocalGroup {
  Group group;
  Box U, inner;
  ScalarField lambda;
};

struct Localization {
  std::vector<LocalGroup> groups;
  double dropped_mass = 0.0;
  std::vector<int> dropped_ids;
  double clamp_width = 0.0;
};

// Smooth truncation of f to [-M, M]; equals f wherever |f| <= M.
inline Expr tietze_surrogate(const Expr& f, double M, double w) { return make_apply(std::make_shared<SmoothClampFn>(M, w), f); }

// Pairwise disjoint boxes U_j = bbox(C_j) + gamma inside Omega, cutoffs
// psi_j = 1 on bbox(C_j) + gamma/2, and lambda_j = psi_j * f~.
inline Localization localize(const AtomCloud& C, std::vector<Group> groups, const Box& omega, const Expr& f, double M, double budget) {
  Localization loc;
  std::vector<Cluster> atoms;
  std::unordered_map<size_t, size_t> owner;
  for (size_t k = 0; k < groups.size(); ++k) {
    atoms.push_back(groups[k].atoms);
    for (size_t i : groups[k].atoms) owner[i] = k;
  }
  for (size_t k = 0; k < groups.size(); ++k)
    for (size_t i : groups[k].atoms)
      require(omega.contains_open(C.point(i)), "localize: atom " + std::to_string(C.id[i]) + " is not inside Omega");
  Separation sep = refine_and_separate(C, std::move(atoms), budget, omega);
  loc.dropped_mass = sep.dropped_mass;
  loc.dropped_ids = sep.dropped_ids;
  loc.clamp_width = std::max(1e-6 * M, 1e-300);
  Expr ft = tietze_surrogate(f, M, loc.clamp_width);
  for (size_t k = 0; k < sep.clusters.size(); ++k) {
    LocalGroup lg;
    lg.group = groups[owner.at(sep.clusters[k].front())];
    lg.group.atoms = sep.clusters[k];
    lg.U = sep.outer[k];
    lg.inner = sep.inner[k];
    lg.lambda = {make_product(bump(lg.U, lg.inner), ft), lg.U};
    loc.groups.push_back(std::move(lg));
  }
  return loc;
}

struct GroupSolution {
  int direction = -1;
  Vec v;
  int piece = -1;
  Box U, inner;
  ScalarField lambda;
  SchemeResult scheme;
};

struct Solution {
  int d = 0;
  double eps = 0.0, delta = 0.0;
  double alpha = 0.0, deltatilde = 0.0;
  int net_size = 0;
  double M = 0.0;
  VectorField V;
  AtomCloud cloud;  // the sampled measure
  AtomCloud K;
  std::vector<GroupSolution> groups;
  // mass ledger
  double lusin_dropped = 0.0;
  double partition_dropped = 0.0;
  std::vector<int> partition_dropped_ids;
  double certified_lip = 0.0;
  double certified_sup = 0.0;
  double residual_tol = 0.0;  // absolute, max over groups
  double clamp_width = 0.0;

  int N() const { return static_cast<int>(groups.size()); }
  double scheme_dropped() const {
    double s = 0.0;
    for (const auto& g : groups) s += g.scheme.dropped_total();
    return s;
  }
  double dropped_total() const { return lusin_dropped + partition_dropped + scheme_dropped(); }
  // index of the group whose retained set contains atom id, or -1
  std::unordered_map<int, int> owner_of_K() const {
    std::unordered_map<int, int> o;
    for (size_t j = 0; j < groups.size(); ++j)
      for (int id : groups[j].scheme.K.id) o[id] = static_cast<int>(j);
    return o;
  }
};

struct SolveOptions {
  int resolution = 200;
  uint64_t seed = 7;
  SchemeOptions scheme;
};

// Divergence solve on an already sampled cloud (positions in Omega).
inline Solution solve_divergence_on(const ModelMeasure& m, const AtomCloud& C, const Box& omega, const Expr& f, double eps, double delta,
                                    const SolveOptions& opt = {}) {
  require(eps > 0.0 && std::isfinite(eps), "solve_divergence: eps must be positive");
  require(delta > 0.0 && std::isfinite(delta), "solve_divergence: delta must be positive");
  require(f->dim() == m.d && omega.dim() == m.d, "solve_divergence: dimension mismatch");
  Solution s;
  s.d = m.d;
  s.eps = eps;
  s.delta = delta;
  s.cloud = C;
  s.V.d = m.d;
  s.K.d = m.d;
  for (size_t i = 0; i < C.size(); ++i) {
    require(omega.contains_open(C.point(i)), "solve_divergence: atom " + std::to_string(C.id[i]) + " lies outside Omega");
    double v = f->value(C.point(i));
    require(std::isfinite(v), "solve_divergence: datum is not finite at atom " + std::to_string(C.id[i]));
    s.M = std::max(s.M, std::abs(v));
  }
  if (s.M == 0.0) {
    s.K = C;
    return s;
  }
  AlphaChoice ac = pick_alpha_deltatilde(delta);
  s.alpha = ac.alpha;
  s.deltatilde = ac.deltatilde;
  DirectionNet net = build_direction_net(m.d, ac.alpha, opt.seed);
  s.net_size = static_cast<int>(net.directions.size());

  // C is the full cloud (continuous data need no Lusin set), so the first
  // eps/3 goes unused and the second covers transversality and separation.
  s.lusin_dropped = 0.0;
  Partition part = partition_by_direction(C, m, net, eps / 3.0);
  Localization loc = localize(C, part.groups, omega, f, s.M, eps / 3.0 - part.dropped_mass);
  s.partition_dropped = part.dropped_mass + loc.dropped_mass;
  s.partition_dropped_ids = part.dropped_ids;
  s.partition_dropped_ids.insert(s.partition_dropped_ids.end(), loc.dropped_ids.begin(), loc.dropped_ids.end());
  s.clamp_width = loc.clamp_width;

  const int N = static_cast<int>(loc.groups.size());
  const double eta = eps / (3.0 * N);
  for (const LocalGroup& lg : loc.groups) {
    GroupSolution gs;
    gs.direction = lg.group.direction;
    gs.v = lg.group.v;
    gs.piece = lg.group.piece;
    gs.U = lg.U;
    gs.inner = lg.inner;
    gs.lambda = lg.lambda;
    Cone cone(lg.group.v, ac.alpha);
    WidthFactory wf = WidthFactory::for_carrier(m.pieces[lg.group.piece].carrier, lg.group.cert);
    try {
      gs.scheme = run_scheme(lg.U, C.subset(lg.group.atoms), cone, lg.lambda, eta, ac.deltatilde, wf, opt.scheme);
    } catch (const Error& e) {
      throw Error(std::string(e.what()) + " [group direction " + std::to_string(gs.direction) + ", piece " + std::to_string(gs.piece) + "]");
    }
    s.certified_lip = std::max(s.certified_lip, gs.scheme.certified_grad);
    s.certified_sup = std::max(s.certified_sup, gs.scheme.certified_sup);
    s.residual_tol = std::max(s.residual_tol, gs.scheme.residual_tol);
    s.V.terms.push_back({gs.scheme.u, gs.v});
    for (size_t i = 0; i < gs.scheme.K.size(); ++i) s.K.push(gs.scheme.K.point(i), gs.scheme.K.w[i], gs.scheme.K.piece[i], gs.scheme.K.id[i], gs.scheme.K.par(i));
    s.groups.push_back(std::move(gs));
  }
  return s;
}

struct DivergenceProblem {
  ModelMeasure measure;
  Box omega;
  Expr f;
  double eps = 0.5, delta = 0.5;
  SolveOptions opt;
};

inline Solution solve_divergence(const DivergenceProblem& p) {
  AtomCloud C = sample_atoms(p.measure, p.opt.resolution);
  return solve_divergence_on(p.measure, C, p.omega, p.f, p.eps, p.delta, p.opt);
}

struct BackgroundSolution {
  VectorField W;
  Expr div_W;
  Solution Z;
  VectorField V;  // W + Z
};

// V = W + Z with div Z = f - div W on K.
inline BackgroundSolution perturb_background(const VectorField& W, const DivergenceProblem& p) {
  BackgroundSolution b;
  b.W = W;
  b.div_W = divergence_expr(W);
  DivergenceProblem q = p;
  q.f = make_sum(p.f, make_scale(-1.0, b.div_W));
  b.Z = solve_divergence(q);
  b.V = W;
  for (const auto& t : b.Z.V.terms) b.V.terms.push_back(t);
  return b;
}

struct JacobianProblem {
  ModelMeasure measure;
  Box omega;
  Expr g;
  double eps = 0.5, delta = 0.5;
  SolveOptions opt;
};

struct MapSolution {
  Solution sol;  // for the datum g - 1; Phi = Id + sol.V
  double L = 0.0;
  bool diffeo_flag = false;
  double inverse_lip_bound = std::numeric_limits<double>::infinity();

  MapField phi() const { return MapField{sol.V}; }
};

inline MapSolution solve_jacobian_on(const ModelMeasure& m, const AtomCloud& C, const Box& omega, const Expr& g, double eps, double delta,
                                     const SolveOptions& opt = {}) {
  MapSolution ms;
  Expr gm1 = make_sum(g, make_const(g->dim(), -1.0));
  ms.sol = solve_divergence_on(m, C, omega, gm1, eps, delta, opt);
  ms.L = ms.sol.M;
  if ((1.0 + delta) * ms.L < 1.0) {
    ms.diffeo_flag = true;
    ms.inverse_lip_bound = 1.0 / (1.0 - (1.0 + delta) * ms.L);
  }
  return ms;
}

inline MapSolution solve_jacobian(const JacobianProblem& p) {
  AtomCloud C = sample_atoms(p.measure, p.opt.resolution);
  return solve_jacobian_on(p.measure, C, p.omega, p.g, p.eps, p.delta, p.opt);
}

// Rank-one route: det(I + v (x) grad u) = 1 + v . grad u.
inline double det_rank_one(const Vec& v, const double* grad_u) { return 1.0 + dot(v.data(), grad_u, static_cast<int>(v.size())); }

inline double det_direct(const MapField& phi, const double* x) {
  const int d = phi.dim();
  std::vector<double> J(d * d);
  phi.jacobian(x, J.data());
  return determinant(J, d);
}

using AffineMap = Placement;

inline ModelMeasure pushforward(const ModelMeasure& m, const AffineMap& F) {
  ModelMeasure out;
  for (const auto& pc : m.pieces) {
    Carrier c = pc.carrier;
    std::visit([&](auto& x) { x.place = F.after(x.place); }, c);
    out.add(std::move(c), pc.weight);
  }
  return out;
}

inline AtomCloud push_atoms(const AtomCloud& C, const AffineMap& F) {
  AtomCloud out = C;
  for (size_t i = 0; i < C.size(); ++i) {
    Vec y = F.apply(C.point_vec(i));
    std::copy(y.begin(), y.end(), out.x.begin() + i * C.d);
  }
  return out;
}

struct DiffeoSolution {
  AffineMap F;
  double det_F = 0.0, lip_F = 0.0, lip_F_inv = 0.0;
  Box image_box;          // U, inside Sigma = F(Omega)
  double image_margin = 0.0;  // lower bound for dist(U, boundary of Sigma)
  double eps_image = 0.0;
  Expr h;
  MapSolution psi;        // Psi = Id + Z on the image
  AtomCloud cloud;        // source atoms
  AtomCloud K;            // preimages of the retained image atoms
  double h_minus_one = 0.0;   // max over atoms |g / det DF - 1|
  double certified_lip = 0.0;  // Lip(Phi - F) <= Lip(Z) Lip(F)
  double lip_bound = 0.0;      // (1 + delta) Lip(F) max |g/det DF - 1|

  void value(const double* x, double* out) const {
    Vec y = F.apply(Vec(x, x + F.d));
    psi.phi().value(y.data(), out);
  }
  // D(Psi o F)(x) = DPsi(F x) A
  void jacobian(const double* x, double* J) const {
    const int d = F.d;
    Vec y = F.apply(Vec(x, x + d));
    std::vector<double> P(d * d);
    psi.phi().jacobian(y.data(), P.data());
    for (int i = 0; i < d; ++i)
      for (int k = 0; k < d; ++k) {
        double s = 0.0;
        for (int m = 0; m < d; ++m) s += P[i * d + m] * F.A[m * d + k];
        J[i * d + k] = s;
      }
  }
};

// Phi = Psi o F with det D Psi = h = (g o F^-1) / det DF on the pushed measure.
inline DiffeoSolution perturb_diffeomorphism(const AffineMap& F, const Expr& g, double eps, const double delta, const ModelMeasure& m,
                                             const Box& omega, const SolveOptions& opt = {}) {
  const int d = m.d;
  require(F.d == d && g->dim() == d, "perturb_diffeomorphism: dimension mismatch");
  DiffeoSolution s;
  s.F = F;
  s.det_F = determinant(F.A, d);
  require(std::isfinite(s.det_F) && std::abs(s.det_F) > 1e-12, "perturb_diffeomorphism: F is not invertible");
  s.lip_F = spectral_norm(F.A, d);
  // inverse as an affine map: x = A^-1 y - A^-1 c
  AffineMap Finv{d, std::vector<double>(d * d), Vec(d)};
  for (int k = 0; k < d; ++k) {
    Vec ek(d, 0.0);
    ek[k] = 1.0;
    AffineMap lin{d, F.A, Vec(d, 0.0)};
    Vec col = lin.invert(ek);
    for (int i = 0; i < d; ++i) Finv.A[i * d + k] = col[i];
  }
  Finv.c = Finv.linear(F.c);
  for (double& v : Finv.c) v = -v;
  s.lip_F_inv = spectral_norm(Finv.A, d);

  s.cloud = sample_atoms(m, opt.resolution);
  AtomCloud img = push_atoms(s.cloud, F);
  for (size_t i = 0; i < s.cloud.size(); ++i) {
    Vec back = Finv.apply(img.point_vec(i));
    double err = 0.0;
    for (int k = 0; k < d; ++k) err = std::max(err, std::abs(back[k] - s.cloud.point(i)[k]));
    require(err <= 1e-9, "perturb_diffeomorphism: inverse mismatch " + std::to_string(err) + " at atom " + std::to_string(s.cloud.id[i]));
  }
  // largest inflation of the image atoms' box whose corners pull back into Omega
  Box bb = img.bbox();
  double r = 0.1 * std::max(bb.diameter(), 1e-6);
  auto corner_margin = [&](const Box& b) {
    double mm = std::numeric_limits<double>::infinity();
    for (int mask = 0; mask < (1 << d); ++mask) {
      Vec c(d);
      for (int k = 0; k < d; ++k) c[k] = (mask >> k) & 1 ? b.hi[k] : b.lo[k];
      Vec x = Finv.apply(c);
      mm = std::min(mm, dist_to_box_boundary(omega, x.data()));
    }
    return mm;
  };
  int tries = 0;
  while (corner_margin(bb.inflated(r)) <= 0.0) {
    r *= 0.5;
    require(++tries < 60, "perturb_diffeomorphism: pushed atoms are not inside F(Omega) with a margin");
  }
  s.image_box = bb.inflated(r);
  s.image_margin = corner_margin(s.image_box) / s.lip_F_inv;
  s.eps_image = std::min(eps / 2.0, s.image_margin / 2.0);

  std::vector<Expr> inv_map;
  for (int i = 0; i < d; ++i) inv_map.push_back(make_affine(Vec(Finv.A.begin() + i * d, Finv.A.begin() + (i + 1) * d), Finv.c[i]));
  s.h = make_scale(1.0 / s.det_F, make_compose(g, inv_map));
  ModelMeasure mi = pushforward(m, F);
  s.psi = solve_jacobian_on(mi, img, s.image_box, s.h, s.eps_image, delta, opt);

  for (size_t i = 0; i < s.cloud.size(); ++i) s.h_minus_one = std::max(s.h_minus_one, std::abs(g->value(s.cloud.point(i)) / s.det_F - 1.0));
  s.certified_lip = s.psi.sol.certified_lip * s.lip_F;
  s.lip_bound = (1.0 + delta) * s.lip_F * s.h_minus_one;

  std::unordered_map<int, size_t> by_id;
  for (size_t i = 0; i < s.cloud.size(); ++i) by_id[s.cloud.id[i]] = i;
  std::vector<size_t> keep;
  for (int id : s.psi.sol.K.id) keep.push_back(by_id.at(id));
  std::sort(keep.begin(), keep.end());
  s.K = s.cloud.subset(keep);
  return s;
}

}  // namespace lusin
