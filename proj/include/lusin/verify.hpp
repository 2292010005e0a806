#pragma once

#include <cfloat>
#include <functional>
#include <set>

#include "lusin/assembly.hpp"
#include "lusin/report.hpp"

namespace lusin {

inline constexpr double kExactRelTol = 1e-9;
inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdTol = 1e-4;
inline constexpr double kRoutesTol = 1e-12;
inline constexpr double kGradientOracleTol = 1e-6;
inline constexpr int kLipPairs = 100000;
inline constexpr int kInjectivityPairs = 10000;

namespace detail {

// Calls fn on a tensor grid over b; per-axis resolution drops for d > 2 so the
// point count stays near res^2.
template <class Fn>
void for_grid(const Box& b, int res, Fn&& fn) {
  const int d = b.dim();
  int n = d <= 2 ? res : std::max(4, static_cast<int>(std::lround(std::pow(static_cast<double>(res) * res, 1.0 / d))));
  n = std::max(n, 2);
  std::vector<int> idx(d, 0);
  Vec x(d);
  for (;;) {
    for (int k = 0; k < d; ++k) x[k] = b.lo[k] + (b.hi[k] - b.lo[k]) * idx[k] / (n - 1);
    fn(x.data());
    int k = 0;
    while (k < d && ++idx[k] == n) idx[k++] = 0;
    if (k == d) break;
  }
}

inline Vec uniform_in(const Box& b, Rng& rng) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  Vec x(b.dim());
  for (int k = 0; k < b.dim(); ++k) x[k] = b.lo[k] + (b.hi[k] - b.lo[k]) * U(rng);
  return x;
}

// A point a random log-scale distance (1e-9 .. 1e-2) from x in a random direction.
inline Vec near(const double* x, int d, Rng& rng) {
  std::uniform_real_distribution<double> E(-9.0, -2.0);
  Vec dir = random_unit(d, rng);
  double r = std::pow(10.0, E(rng));
  Vec y(x, x + d);
  for (int k = 0; k < d; ++k) y[k] += r * dir[k];
  return y;
}

inline double dist(const double* a, const double* b, int d) {
  double s = 0.0;
  for (int k = 0; k < d; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

// Empirical Lipschitz constant of a map over random pairs: half uniform in
// `region`, half a short hop away from an anchor atom.
template <class Map>
Worst empirical_lip(const Map& map, int d, const Box& region, const AtomCloud& anchors, int pairs, Rng& rng) {
  Worst w;
  std::vector<double> a(d), b(d);
  std::uniform_int_distribution<size_t> pick(0, anchors.empty() ? 0 : anchors.size() - 1);
  for (int p = 0; p < pairs; ++p) {
    Vec x, y;
    if (p % 2 == 0 || anchors.empty()) {
      x = uniform_in(region, rng);
      y = uniform_in(region, rng);
    } else {
      x = near(anchors.point(pick(rng)), d, rng);
      y = near(x.data(), d, rng);
    }
    double r = dist(x.data(), y.data(), d);
    if (r == 0.0) continue;
    map(x.data(), a.data());
    map(y.data(), b.data());
    w.offer(dist(a.data(), b.data(), d) / r, x.data(), d);
  }
  return w;
}

inline double central_divergence(const VectorField& V, const double* x, double h) {
  const int d = V.d;
  Vec xp(x, x + d), xm = xp;
  std::vector<double> vp(d), vm(d);
  double s = 0.0;
  for (int k = 0; k < d; ++k) {
    xp[k] = x[k] + h;
    xm[k] = x[k] - h;
    V.value(xp.data(), vp.data());
    V.value(xm.data(), vm.data());
    s += (vp[k] - vm[k]) / (2.0 * h);
    xp[k] = xm[k] = x[k];
  }
  return s;
}

// Spectral norm of the Jacobian of V at x.
inline double jacobian_norm(const VectorField& V, const double* x) {
  std::vector<double> J(V.d * V.d);
  V.jacobian(x, J.data());
  return spectral_norm(J, V.d);
}

inline double max_abs_on(const AtomCloud& C, const Expr& f) {
  double m = 0.0;
  for (size_t i = 0; i < C.size(); ++i) m = std::max(m, std::abs(f->value(C.point(i))));
  return m;
}

}  // namespace detail

// Ridders' extrapolated central difference of f along coordinate k.
template <class F>
double ridders_derivative(F&& f, const double* x, int d, int k, double h, double* err_out = nullptr) {
  constexpr int ntab = 10;
  constexpr double con = 1.4, con2 = con * con, safe = 2.0;
  double a[ntab][ntab];
  Vec xp(x, x + d), xm = xp;
  auto cd = [&](double hh) {
    xp[k] = x[k] + hh;
    xm[k] = x[k] - hh;
    return (f(xp.data()) - f(xm.data())) / (2.0 * hh);
  };
  a[0][0] = cd(h);
  double err = std::numeric_limits<double>::infinity(), ans = a[0][0];
  for (int i = 1; i < ntab; ++i) {
    h /= con;
    a[0][i] = cd(h);
    double fac = con2;
    for (int j = 1; j <= i; ++j) {
      a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
      fac *= con2;
      double errt = std::max(std::abs(a[j][i] - a[j - 1][i]), std::abs(a[j][i] - a[j - 1][i - 1]));
      if (errt <= err) {
        err = errt;
        ans = a[j][i];
      }
    }
    if (std::abs(a[i][i] - a[i - 1][i - 1]) >= safe * err) break;
  }
  if (err_out) *err_out = err;
  return ans;
}

// Ridders from h, restarted at h/10, h/100, ... down to 1e-10 while its own
// error estimate exceeds 1e-8 (1 + |estimate|); the step is chosen from the
// difference table alone. Restarts handle layers thinner than h (IFS plateau
// ramps).
template <class F>
double adaptive_derivative(F&& f, const double* x, int d, int k, double h) {
  double best_err = std::numeric_limits<double>::infinity(), best = 0.0;
  for (; h >= 1e-10; h /= 10.0) {
    double err = 0.0;
    double v = ridders_derivative(f, x, d, k, h, &err);
    if (err < best_err) {
      best_err = err;
      best = v;
    }
    if (best_err <= 1e-8 * (1.0 + std::abs(best))) break;
  }
  return best;
}

// Exact Jacobian against extrapolated finite differences at random points of
// `region`; entries compared relative to 1 + |exact|.
inline Report gradient_oracle(const VectorField& V, const Box& region, int points = 1000, uint64_t seed = 5, double h = 1e-6) {
  const int d = V.d;
  Rng rng(seed);
  Worst w;
  std::vector<double> J(d * d), tmp(d);
  for (int p = 0; p < points; ++p) {
    Vec x = detail::uniform_in(region, rng);
    V.jacobian(x.data(), J.data());
    for (int i = 0; i < d; ++i) {
      auto comp = [&](const double* y) {
        V.value(y, tmp.data());
        return tmp[i];
      };
      for (int k = 0; k < d; ++k) {
        double fd = adaptive_derivative(comp, x.data(), d, k, h);
        double exact = J[i * d + k];
        w.offer(std::abs(fd - exact) / (1.0 + std::abs(exact)), x.data(), d);
      }
    }
  }
  Report r;
  r.upper("gradient_oracle", points > 0 ? w.value : 0.0, kGradientOracleTol, w.at);
  return r;
}

inline VectorField as_vector_field(const ScalarField& s) {
  VectorField v;
  v.d = s.dim();
  Vec e(v.d, 0.0);
  e[0] = 1.0;
  v.terms.push_back({s, e});
  return v;
}

// Recomputes the dropped mass from the raw id logs and checks the three-part
// split eps/3 + eps/3 + sum_j eps/(3N) against the logged totals.
inline Report mass_ledger_audit(const Solution& s) {
  Report r;
  const double eps = s.eps;
  std::unordered_map<int, double> weight;
  for (size_t i = 0; i < s.cloud.size(); ++i) weight[s.cloud.id[i]] = s.cloud.w[i];
  auto mass_of = [&](const std::vector<int>& ids) {
    double m = 0.0;
    for (int id : ids) {
      auto it = weight.find(id);
      m += it == weight.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
    }
    return m;
  };

  std::set<int> logged(s.partition_dropped_ids.begin(), s.partition_dropped_ids.end());
  double part2 = mass_of(s.partition_dropped_ids);
  double part3_max = 0.0, part3_sum = 0.0, logged_mismatch = std::abs(part2 - s.partition_dropped);
  for (const GroupSolution& g : s.groups) {
    std::vector<int> ids = g.scheme.initial_dropped_ids;
    for (const StageLog& st : g.scheme.stages) ids.insert(ids.end(), st.dropped_ids.begin(), st.dropped_ids.end());
    double m = mass_of(ids);
    logged_mismatch = std::max(logged_mismatch, std::abs(m - g.scheme.dropped_total()));
    part3_max = std::max(part3_max, m);
    part3_sum += m;
    logged.insert(ids.begin(), ids.end());
  }
  // every atom is either retained or logged as dropped, and never both
  std::set<int> kept(s.K.id.begin(), s.K.id.end());
  double missing = 0.0;
  for (size_t i = 0; i < s.cloud.size(); ++i) {
    int id = s.cloud.id[i];
    bool in_k = kept.count(id) > 0, in_log = logged.count(id) > 0;
    if (in_k == in_log) missing += s.cloud.w[i];
  }
  double total = s.lusin_dropped + part2 + part3_sum;
  double direct = s.cloud.mass() - s.K.mass();

  r.below("ledger_lusin", s.lusin_dropped, eps / 3.0);
  r.below("ledger_partition", part2, eps / 3.0);
  if (s.N() > 0) r.below("ledger_scheme_max", part3_max, eps / (3.0 * s.N()));
  r.upper("ledger_log_consistency", std::max(logged_mismatch, missing), 1e-12);
  r.upper("ledger_recount", std::abs(total - direct), 1e-12);
  r.below("ledger_total", total, eps);
  return r;
}

// Stage logs against the decay law max |r_n| <= t^n M and the per-stage certificates.
inline Report verify_residual_decay(const Solution& s) {
  Report r;
  double worst = 0.0, cert = 0.0;
  bool decay_ok = true, cert_ok = true, final_ok = true;
  double final_worst = 0.0;
  for (const GroupSolution& g : s.groups) {
    for (const StageLog& st : g.scheme.stages) {
      if (!(st.residual_max <= st.bound)) decay_ok = false;
      if (st.bound > 0.0) worst = std::max(worst, st.residual_max / st.bound);
      if (!(st.grad_cert <= st.grad_bound * (1.0 + 1e-12)) || !(st.sup_cert <= st.sup_bound * (1.0 + 1e-12))) cert_ok = false;
      if (st.grad_bound > 0.0) cert = std::max(cert, st.grad_cert / st.grad_bound);
      if (st.sup_bound > 0.0) cert = std::max(cert, st.sup_cert / st.sup_bound);
    }
    if (!(g.scheme.residual_max <= g.scheme.residual_bound)) final_ok = false;
    if (g.scheme.residual_bound > 0.0) final_worst = std::max(final_worst, g.scheme.residual_max / g.scheme.residual_bound);
  }
  r.upper("residual_decay", worst, 1.0).pass = decay_ok;
  r.upper("stage_certificates", cert, 1.0 + 1e-12).pass = cert_ok;
  r.upper("residual_final", final_worst, 1.0).pass = final_ok;
  return r;
}

namespace detail {

inline void support_checks(Report& r, const VectorField& V, const Box& omega, const AtomCloud& K, int grid) {
  double clear = std::numeric_limits<double>::infinity();
  for (const auto& t : V.terms) clear = std::min(clear, omega.clearance(t.scalar.support));
  Check& c = r.lower("support_in_omega", V.terms.empty() ? 1.0 : clear, 0.0);
  c.pass = V.terms.empty() || clear > 0.0;

  Worst out;
  std::vector<double> v(V.d);
  for_grid(omega.inflated(0.1 * omega.diameter()), grid, [&](const double* x) {
    if (omega.contains_open(x)) return;
    V.value(x, v.data());
    out.offer(norm(v.data(), V.d), x, V.d);
  });
  r.upper("vanishes_outside_omega", std::max(0.0, out.value), 0.0, out.at);

  // exactly one term is live at each retained atom
  Worst multi;
  for (size_t i = 0; i < K.size(); ++i) {
    int live = 0;
    for (const auto& t : V.terms)
      if (t.scalar.support.contains(K.point(i))) ++live;
    multi.offer(live, K.point(i), V.d);
  }
  Check& l = r.upper("locality", K.empty() ? 1.0 : multi.value, 1.0, multi.at);
  l.pass = K.empty() || V.terms.empty() || multi.value == 1.0;
}

}  // namespace detail

// Divergence contract on K plus the norm and mass budgets.
inline Report verify_divergence(const Solution& s, const Expr& f, const Box& omega, int grid = 200, uint64_t seed = 13) {
  Report r;
  const int d = s.d;
  const VectorField& V = s.V;
  const double M = s.M;

  Worst ex, fd;
  for (size_t i = 0; i < s.K.size(); ++i) {
    const double* x = s.K.point(i);
    double fv = f->value(x);
    ex.offer(std::abs(V.divergence(x) - fv), x, d);
    fd.offer(std::abs(detail::central_divergence(V, x, kFdStep) - fv), x, d);
  }
  const double tol = std::max(s.residual_tol, kExactRelTol * M);
  r.upper("div_exact", s.K.empty() ? 0.0 : ex.value, tol, ex.at);
  r.upper("div_fd", s.K.empty() ? 0.0 : fd.value, kFdTol, fd.at).note = "central difference, step 1e-5";

  Worst sup;
  std::vector<double> v(d);
  detail::for_grid(omega, grid, [&](const double* x) {
    V.value(x, v.data());
    sup.offer(norm(v.data(), d), x, d);
  });
  r.upper("sup_grid", sup.value, s.eps, sup.at);
  r.upper("sup_certified", s.certified_sup, s.eps);

  const double lip_bound = (1.0 + s.delta) * M;
  Check& lc = r.upper("lip_certified", s.certified_lip, lip_bound);
  lc.pass = M == 0.0 ? s.certified_lip == 0.0 : s.certified_lip < lip_bound;
  Rng rng(seed);
  Worst pairs = detail::empirical_lip([&](const double* x, double* out) { V.value(x, out); }, d, omega, s.K, kLipPairs, rng);
  const double lip_cap = s.certified_lip * (1.0 + 1e-9) + 1e-300;
  r.upper("lip_pairs", std::max(0.0, pairs.value), lip_cap, pairs.at);
  Worst gn;
  detail::for_grid(omega, grid, [&](const double* x) { gn.offer(detail::jacobian_norm(V, x), x, d); });
  for (size_t i = 0; i < s.K.size(); ++i) gn.offer(detail::jacobian_norm(V, s.K.point(i)), s.K.point(i), d);
  r.upper("lip_gradient", std::max(0.0, gn.value), lip_cap, gn.at);

  detail::support_checks(r, V, omega, s.K, grid);
  r.merge(mass_ledger_audit(s));
  r.merge(verify_residual_decay(s));
  return r;
}

inline Report verify_divergence(const Solution& s, const DivergenceProblem& p, int grid = 200, uint64_t seed = 13) {
  return verify_divergence(s, p.f, p.omega, grid, seed);
}

// Determinant contract on K through both routes, norm budgets, injectivity and
// identity outside the support.
inline Report verify_jacobian(const MapSolution& ms, const Expr& g, const Box& omega, int grid = 200, uint64_t seed = 17) {
  Report r;
  const Solution& s = ms.sol;
  const int d = s.d;
  const VectorField& V = s.V;
  const MapField phi = ms.phi();
  const double L = ms.L;
  const double gmax = detail::max_abs_on(s.cloud, g);

  Worst r1, dd, agree;
  std::vector<double> J(d * d);
  for (size_t i = 0; i < s.K.size(); ++i) {
    const double* x = s.K.point(i);
    double gv = g->value(x);
    double a = 1.0 + V.divergence(x);
    double b = det_direct(phi, x);
    r1.offer(std::abs(a - gv), x, d);
    dd.offer(std::abs(b - gv), x, d);
    agree.offer(std::abs(a - b), x, d);
  }
  Rng rng(seed);
  for (int p = 0; p < 2000; ++p) {
    Vec x = detail::uniform_in(omega, rng);
    agree.offer(std::abs(1.0 + V.divergence(x.data()) - det_direct(phi, x.data())), x.data(), d);
  }
  const double tol = kExactRelTol * L * (1.0 + gmax) + 8.0 * DBL_EPSILON * (1.0 + gmax);
  r.upper("det_rank_one", s.K.empty() ? 0.0 : r1.value, tol, r1.at);
  r.upper("det_direct", s.K.empty() ? 0.0 : dd.value, tol, dd.at);
  r.upper("det_routes_agree", agree.value, kRoutesTol, agree.at);

  Worst sup, id_out;
  std::vector<double> v(d);
  detail::for_grid(omega, grid, [&](const double* x) {
    V.value(x, v.data());
    sup.offer(norm(v.data(), d), x, d);
    // term supports mask V itself, so test against the localisation boxes
    bool inside = false;
    for (const auto& gr : s.groups) inside = inside || gr.U.contains(x);
    if (!inside) {
      phi.value(x, v.data());
      id_out.offer(detail::dist(v.data(), x, d), x, d);
    }
  });
  r.upper("sup_grid", sup.value, s.eps, sup.at);
  r.upper("identity_outside_support", std::max(0.0, id_out.value), 0.0, id_out.at);

  const double lip_bound = (1.0 + s.delta) * L;
  Check& lc = r.upper("lip_certified", s.certified_lip, lip_bound);
  lc.pass = L == 0.0 ? s.certified_lip == 0.0 : s.certified_lip < lip_bound;
  const double lip_cap = s.certified_lip * (1.0 + 1e-9) + 1e-300;
  Worst pairs = detail::empirical_lip([&](const double* x, double* out) { V.value(x, out); }, d, omega, s.K, kLipPairs, rng);
  r.upper("lip_pairs", std::max(0.0, pairs.value), lip_cap, pairs.at);

  if (ms.diffeo_flag) {
    const double floor = 1.0 - (1.0 + s.delta) * L - 1e-9;
    Worst low;
    std::vector<double> a(d), b(d);
    std::uniform_int_distribution<size_t> pick(0, s.K.empty() ? 0 : s.K.size() - 1);
    for (int p = 0; p < kInjectivityPairs; ++p) {
      Vec x, y;
      if (p % 2 == 0 || s.K.empty()) {
        x = detail::uniform_in(omega, rng);
        y = detail::uniform_in(omega, rng);
      } else {
        x = detail::near(s.K.point(pick(rng)), d, rng);
        y = detail::near(x.data(), d, rng);
      }
      double dxy = detail::dist(x.data(), y.data(), d);
      if (dxy == 0.0) continue;
      phi.value(x.data(), a.data());
      phi.value(y.data(), b.data());
      low.offer(-detail::dist(a.data(), b.data(), d) / dxy, x.data(), d);
    }
    r.lower("injectivity", -low.value, floor, low.at);
  } else {
    r.skipped("injectivity", "(1 + delta) L >= 1");
  }

  detail::support_checks(r, V, omega, s.K, grid);
  r.merge(mass_ledger_audit(s));
  r.merge(verify_residual_decay(s));
  return r;
}

inline Report verify_jacobian(const MapSolution& ms, const JacobianProblem& p, int grid = 200, uint64_t seed = 17) {
  return verify_jacobian(ms, p.g, p.omega, grid, seed);
}

// Phi = Psi o F: determinant by the chain rule on K, the Lip(Phi - F) budget
// and sup |Phi - F| <= eps.
inline Report verify_diffeomorphism(const DiffeoSolution& D, const Expr& g, const Box& omega, double eps, int grid = 200, uint64_t seed = 19) {
  Report r;
  const int d = D.F.d;
  Worst det;
  std::vector<double> J(d * d);
  for (size_t i = 0; i < D.K.size(); ++i) {
    const double* x = D.K.point(i);
    D.jacobian(x, J.data());
    det.offer(std::abs(determinant(J, d) - g->value(x)), x, d);
  }
  r.upper("det_chain", D.K.empty() ? 0.0 : det.value, 1e-8, det.at);

  auto diff = [&](const double* x, double* out) {
    D.value(x, out);
    Vec fx = D.F.apply(Vec(x, x + d));
    for (int k = 0; k < d; ++k) out[k] -= fx[k];
  };
  Worst sup;
  std::vector<double> v(d);
  detail::for_grid(omega, grid, [&](const double* x) {
    diff(x, v.data());
    sup.offer(norm(v.data(), d), x, d);
  });
  r.upper("sup_grid", sup.value, eps, sup.at);
  r.upper("lip_certified", D.certified_lip, D.lip_bound * (1.0 + 1e-9));
  Rng rng(seed);
  Worst pairs = detail::empirical_lip(diff, d, omega, D.K, kLipPairs, rng);
  r.upper("lip_pairs", std::max(0.0, pairs.value), D.certified_lip * (1.0 + 1e-9) + 1e-300, pairs.at);
  Check& m = r.lower("image_margin", D.image_margin, 0.0);
  m.pass = D.image_margin > 0.0;
  r.merge(mass_ledger_audit(D.psi.sol), "image_");
  r.merge(verify_residual_decay(D.psi.sol), "image_");
  return r;
}

using DetFormula = std::function<double(const Vec& v, const Vec& w)>;

// |det(I + v (x) w) - formula(v, w)| over random v, w with entries in [-1, 1];
// the default formula is 1 + v.w.
inline Report brute_force_det_lemma(int d, int trials, uint64_t seed = 23, DetFormula formula = nullptr) {
  require(d >= 2 && d <= 6, "brute_force_det_lemma: d must lie in 2..6");
  if (!formula) formula = [](const Vec& v, const Vec& w) { return 1.0 + dot(v, w); };
  Rng rng(seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  Worst w;
  Vec a(d), b(d);
  std::vector<double> A(d * d);
  for (int t = 0; t < trials; ++t) {
    for (int k = 0; k < d; ++k) {
      a[k] = U(rng);
      b[k] = U(rng);
    }
    for (int i = 0; i < d; ++i)
      for (int k = 0; k < d; ++k) A[i * d + k] = (i == k ? 1.0 : 0.0) + a[i] * b[k];
    Vec at = a;
    at.insert(at.end(), b.begin(), b.end());
    w.offer(std::abs(determinant(A, d) - formula(a, b)), at.data(), 2 * d);
  }
  Report r;
  r.upper("rank_one_identity_d" + std::to_string(d), trials > 0 ? w.value : 0.0, 1e-12, w.at);
  return r;
}

}  // namespace lusin
