#include <gtest/gtest.h>

#include "lusin/scenario.hpp"

using namespace lusin;

namespace {

const Box kOmega({-1, -1}, {2, 2});

DivergenceProblem div_problem(const std::string& measure, const std::string& f, double eps = 0.5, double delta = 0.5, int res = 200) {
  DivergenceProblem p;
  p.measure = catalog_measure(measure);
  p.omega = kOmega;
  p.f = parse_expr(f, 2);
  p.eps = eps;
  p.delta = delta;
  p.opt.resolution = res;
  return p;
}

const DivergenceProblem& base_problem() {
  static const DivergenceProblem p = div_problem("sine", "sin(3*x1) + 0.5");
  return p;
}
const Solution& base_solution() {
  static const Solution s = solve_divergence(base_problem());
  return s;
}

const JacobianProblem& jac_problem() {
  static const JacobianProblem p{catalog_measure("segment"), kOmega, parse_expr("1.2 + 0.1*x1", 2)};
  return p;
}
const MapSolution& jac_solution() {
  static const MapSolution ms = solve_jacobian(jac_problem());
  return ms;
}

bool fails(const Report& r, const std::string& name) { return r.find(name) && !r.at(name).pass; }
bool passes(const Report& r, const std::string& name) { return r.find(name) && r.at(name).pass; }

// value as the wrapped expression, gradient off by a relative 1e-3
class SkewedGradientNode final : public Node {
 public:
  explicit SkewedGradientNode(Expr e) : Node(e->dim()), e_(std::move(e)) {}
  double value(const double* x) const override { return e_->value(x); }
  double value_grad(const double* x, double* g) const override {
    double v = e_->value_grad(x, g);
    g[0] *= 1.001;
    return v;
  }
  Interval range(const Box& b) const override { return e_->range(b); }
  void grad_range(const Box& b, Interval* out) const override { e_->grad_range(b, out); }
  Json to_json() const override { return e_->to_json(); }

 private:
  Expr e_;
};

VectorField scaled(const VectorField& V, double c) {
  VectorField out = V;
  for (auto& t : out.terms) t.scalar.expr = make_scale(c, t.scalar.expr);
  return out;
}

}  // namespace

TEST(VerifyBaseline, DivergenceContractHolds) {
  Report r = verify_divergence(base_solution(), base_problem());
  for (const Check& c : r.checks)
    if (c.name != "div_fd") EXPECT_TRUE(c.pass) << c.to_json().dump();
  EXPECT_TRUE(passes(gradient_oracle(base_solution().V, kOmega, 300), "gradient_oracle"));
}

TEST(VerifyBaseline, JacobianContractHolds) {
  Report r = verify_jacobian(jac_solution(), jac_problem());
  EXPECT_TRUE(r.pass()) << r.to_json().dump(1);
  EXPECT_TRUE(passes(r, "injectivity"));
}

TEST(Mutation, DoubledFieldBreaksDivergenceAndLipschitz) {
  Solution s = base_solution();
  s.V = scaled(s.V, 2.0);
  Report r = verify_divergence(s, base_problem());
  EXPECT_TRUE(fails(r, "div_exact"));
  // random pairs rarely resolve the thin width layers; the gradient scan does
  EXPECT_TRUE(fails(r, "lip_gradient"));
}

TEST(Mutation, DroppedAtomsPutBackIntoK) {
  // the crossing forces separation to drop one arm near the crossing point;
  // eps = 3 leaves room for that in the budget
  DivergenceProblem p = div_problem("cross", "1", 3.0, 0.5, 100);
  Solution s = solve_divergence(p);
  ASSERT_GT(s.partition_dropped, 0.0);
  Report clean = verify_divergence(s, p);
  EXPECT_TRUE(passes(clean, "div_exact"));
  EXPECT_TRUE(passes(clean, "ledger_recount"));
  s.K = s.cloud;
  Report r = verify_divergence(s, p);
  EXPECT_TRUE(fails(r, "div_exact"));
  EXPECT_TRUE(fails(r, "ledger_log_consistency"));
  EXPECT_TRUE(fails(r, "ledger_recount"));
}

TEST(Mutation, DeletedDropLogEntry) {
  Solution s = solve_divergence(div_problem("cross", "1", 3.0, 0.5, 100));
  Report clean = mass_ledger_audit(s);
  EXPECT_TRUE(clean.pass()) << clean.to_json().dump(1);
  bool removed = false;
  if (!s.partition_dropped_ids.empty()) {
    s.partition_dropped_ids.pop_back();
    removed = true;
  } else {
    for (auto& g : s.groups)
      for (auto& st : g.scheme.stages)
        if (!removed && !st.dropped_ids.empty()) {
          st.dropped_ids.pop_back();
          removed = true;
        }
  }
  ASSERT_TRUE(removed) << "fixture must drop atoms";
  Report r = mass_ledger_audit(s);
  EXPECT_TRUE(fails(r, "ledger_log_consistency"));
}

TEST(Mutation, CorruptedResidualLog) {
  Solution s = base_solution();
  ASSERT_FALSE(s.groups.empty());
  ASSERT_GE(s.groups[0].scheme.stages.size(), 2u);
  StageLog& st = s.groups[0].scheme.stages[1];
  st.residual_max = 2.0 * st.bound;
  Report r = verify_residual_decay(s);
  EXPECT_TRUE(fails(r, "residual_decay"));
  EXPECT_TRUE(passes(r, "residual_final"));
  Solution s2 = base_solution();
  s2.groups[0].scheme.stages[0].grad_cert = 2.0 * s2.groups[0].scheme.stages[0].grad_bound;
  EXPECT_TRUE(fails(verify_residual_decay(s2), "stage_certificates"));
}

TEST(Mutation, OverlappingExtraTermBreaksLocalityAndRoutes) {
  MapSolution ms = jac_solution();
  ASSERT_FALSE(ms.sol.V.terms.empty());
  VectorField::Term extra = ms.sol.V.terms[0];
  // depends on x1 while grad u is along x2 on the segment, so the two rank-one
  // terms interact and det(I + DV) leaves 1 + div V
  extra.scalar.expr = make_scale(0.5, make_sin(make_coord(2, 0)));
  extra.direction = {1, 0};
  ms.sol.V.terms.push_back(extra);
  Report r = verify_jacobian(ms, jac_problem());
  EXPECT_TRUE(fails(r, "locality"));
  EXPECT_TRUE(fails(r, "det_routes_agree"));
}

TEST(Mutation, SkewedGradientFailsOracle) {
  ScalarField f{parse_expr("sin(2*x1)*x2 + x1*x1", 2), kOmega};
  EXPECT_TRUE(passes(gradient_oracle(as_vector_field(f), kOmega, 200), "gradient_oracle"));
  ScalarField bad{std::make_shared<SkewedGradientNode>(f.expr), kOmega};
  Report r = gradient_oracle(as_vector_field(bad), kOmega, 200);
  EXPECT_TRUE(fails(r, "gradient_oracle"));
  EXPECT_GT(r.at("gradient_oracle").value, 1e-5);
}

TEST(Mutation, WrongDeterminantFormula) {
  for (int d = 2; d <= 5; ++d) {
    EXPECT_TRUE(brute_force_det_lemma(d, 2000).pass());
    Report r = brute_force_det_lemma(d, 2000, 23, [](const Vec& v, const Vec& w) { return 1.0 + dot(v, w) + v[0] * w[1]; });
    EXPECT_FALSE(r.pass()) << d;
    Report r2 = brute_force_det_lemma(d, 2000, 23, [](const Vec& v, const Vec& w) { return dot(v, w); });
    EXPECT_FALSE(r2.pass()) << d;
  }
}

TEST(Mutation, BrokenNet) {
  DirectionNet net = build_direction_net(3, kPi / 4);
  ASSERT_TRUE(verify_net(net, 3, 5000).pass());
  net.directions.resize(net.directions.size() / 3);
  EXPECT_FALSE(verify_net(net, 3, 5000).pass());
}

TEST(Mutation, ScaledWidthFunction) {
  ModelMeasure m = catalog_measure("cantor");
  Certificate cert = cone_null_certificate(m.pieces[0].carrier, Cone({1, 0}, kPi / 4));
  AtomCloud E = sample_atoms(m, 8);
  WidthFunction w = WidthFactory::for_carrier(m.pieces[0].carrier, cert).build(E, 0.05);
  ASSERT_TRUE(verify_width(w, 200).pass());
  w.phi.expr = make_scale(1.5, w.phi.expr);
  Report r = verify_width(w, 200);
  EXPECT_TRUE(fails(r, "de_phi_max"));
  EXPECT_TRUE(fails(r, "exactness_on_target"));
}

TEST(Mutation, HugeFieldBreaksSupAndInjectivity) {
  MapSolution ms = jac_solution();
  ASSERT_TRUE(ms.diffeo_flag);
  VectorField::Term big = ms.sol.V.terms[0];
  big.scalar.expr = make_scale(3.0, make_sin(make_scale(10.0, make_coord(2, 0))));
  big.direction = {1, 0};
  ms.sol.V.terms = {big};
  Report r = verify_jacobian(ms, jac_problem());
  EXPECT_TRUE(fails(r, "sup_grid"));
  EXPECT_TRUE(fails(r, "injectivity"));

  Solution s = base_solution();
  // the corrections are tiny (sup near 3e-11 here), so the forgery must be large
  s.V = scaled(s.V, 1e11);
  EXPECT_TRUE(fails(verify_divergence(s, base_problem()), "sup_grid"));
}

TEST(Mutation, SupportLeavingOmega) {
  Solution s = base_solution();
  ASSERT_FALSE(s.V.terms.empty());
  s.V.terms[0].scalar.support = kOmega.inflated(0.5);
  EXPECT_TRUE(fails(verify_divergence(s, base_problem()), "support_in_omega"));
  Solution s2 = base_solution();
  s2.V.terms.push_back({{parse_expr("0.01", 2), kOmega.inflated(0.5)}, {1, 0}});
  Report r = verify_divergence(s2, base_problem());
  EXPECT_TRUE(fails(r, "vanishes_outside_omega"));
}

TEST(Mutation, ForgedDiffeomorphismDeterminant) {
  AffineMap F{2, {1, 0.3, 0, 1}, {0, 0}};
  Expr g = parse_expr("1.1", 2);
  DiffeoSolution D = perturb_diffeomorphism(F, g, 0.5, 0.5, catalog_measure("segment"), kOmega);
  ASSERT_TRUE(verify_diffeomorphism(D, g, kOmega, 0.5).pass());
  EXPECT_TRUE(fails(verify_diffeomorphism(D, parse_expr("1.2", 2), kOmega, 0.5), "det_chain"));
  D.certified_lip *= 10.0;
  EXPECT_TRUE(fails(verify_diffeomorphism(D, g, kOmega, 0.5), "lip_certified"));
}

TEST(Ledger, SplitAtSmallerEps) {
  DivergenceProblem p = div_problem("sine", "sin(3*x1) + 0.5", 0.3);
  Solution s = solve_divergence(p);
  Report r = mass_ledger_audit(s);
  EXPECT_TRUE(r.pass()) << r.to_json().dump(1);
  EXPECT_NEAR(r.at("ledger_partition").limit, 0.1, 1e-15);
  EXPECT_NEAR(r.at("ledger_scheme_max").limit, 0.1 / s.N(), 1e-15);
  EXPECT_LT(s.dropped_total(), 0.3);
  EXPECT_NEAR(s.cloud.mass() - s.K.mass(), s.dropped_total(), 1e-12);
}

TEST(Determinism, RepeatedSolvesAgree) {
  Solution a = solve_divergence(base_problem());
  Solution b = solve_divergence(base_problem());
  EXPECT_EQ(a.V.to_json(), b.V.to_json());
  EXPECT_EQ(a.K.id, b.K.id);
  EXPECT_EQ(verify_divergence(a, base_problem()).to_json(), verify_divergence(b, base_problem()).to_json());
}
