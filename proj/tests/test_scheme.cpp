#include <gtest/gtest.h>

#include <set>

#include "lusin/scenario.hpp"

using namespace lusin;

namespace {

struct Fixture {
  ModelMeasure m;
  AtomCloud nu;
  Cone cone{{0, 1}, kPi / 4};
  WidthFactory width;
};

Fixture make_fixture(const std::string& name, const Vec& axis, int res) {
  Fixture s{catalog_measure(name), {}, Cone(axis, kPi / 4), {}};
  s.nu = sample_atoms(s.m, res);
  Certificate cert = cone_null_certificate(s.m.pieces[0].carrier, s.cone);
  if (!cert.ok) throw Error(cert.reason);
  s.width = WidthFactory::for_carrier(s.m.pieces[0].carrier, cert);
  return s;
}

ScalarField field(const std::string& src, int d) { return {parse_expr(src, d), Box(Vec(d, -10.0), Vec(d, 10.0))}; }

double de(const ScalarField& u, const double* x, const Vec& e) {
  std::array<double, kMaxDim> g;
  u.value_grad(x, g.data());
  return dot(g.data(), e.data(), static_cast<int>(e.size()));
}

}  // namespace

TEST(ChooseT, GridValues) {
  EXPECT_EQ(choose_t(0.5, 0.5), 0.32);
  EXPECT_EQ(choose_t(0.1, 0.1), 0.09);
  EXPECT_EQ(choose_t(1.0, 1.0), 0.48);
  EXPECT_EQ(choose_t(0.2, 0.3), 0.16);
  // below the grid: halving from 0.01
  EXPECT_EQ(choose_t(0.5, 0.01), 0.005);
  EXPECT_THROW(choose_t(0.0, 0.5), Error);
}

TEST(ChooseT, ConditionHoldsAndGridValueIsMaximal) {
  for (double d = 0.02; d < 2.0; d *= 1.3)
    for (double eta : {0.03, 0.4, 1.5}) {
      double t = choose_t(d, eta);
      EXPECT_LT(t_condition(t), 1.0 + std::min(d, eta));
      EXPECT_LT(t, 0.5);
      if (t < 0.49 && t >= 0.01) EXPECT_GE(t_condition(t + 0.01), 1.0 + std::min(d, eta));
    }
}

TEST(ModulusRadius, ConstantFieldUsesTheBoxScale) {
  Box W({0, 0}, {1, 1});
  Modulus m = modulus_radius(field("3", 2), W, 0.01);
  EXPECT_EQ(m.lip, 0.0);
  EXPECT_EQ(m.rho, 2.0 * W.diameter());
}

TEST(ModulusRadius, LinearFieldIsBoundOverSlope) {
  Box W({0, 0}, {1, 1});
  Modulus m = modulus_radius(field("x1", 2), W, 0.01);
  EXPECT_NEAR(m.lip, 1.0, 1e-12);
  EXPECT_NEAR(m.rho, 0.01, 1e-12);
  // variation over any rho-ball stays within the bound
  Modulus m2 = modulus_radius(field("2*x1 + x2", 2), W, 0.1);
  EXPECT_LE(m2.rho * std::sqrt(5.0), 0.1 * (1 + 1e-12));
  EXPECT_THROW(modulus_radius(field("x1", 2), W, 0.0), Error);
}

TEST(GreedyCoverPartition, PartitionWithSmallDiameters) {
  Rng rng(3);
  for (const char* name : {"segment", "sine", "cantor", "union"}) {
    ModelMeasure m = catalog_measure(name);
    AtomCloud c = sample_atoms(m, name[0] == 'c' ? 8 : 300);
    Cluster all(c.size());
    std::iota(all.begin(), all.end(), size_t{0});
    for (double rho : {0.5, 0.1, 0.013}) {
      std::vector<Cluster> parts = greedy_cover_partition(c, all, rho);
      std::multiset<size_t> seen;
      for (const Cluster& q : parts) {
        ASSERT_FALSE(q.empty());
        seen.insert(q.begin(), q.end());
        for (size_t a : q)
          for (size_t b : q) ASSERT_LE(std::sqrt(std::pow(c.point(a)[0] - c.point(b)[0], 2) + std::pow(c.point(a)[1] - c.point(b)[1], 2)), rho * (1 + 1e-12));
      }
      ASSERT_EQ(seen.size(), c.size());
      ASSERT_EQ(std::set<size_t>(seen.begin(), seen.end()).size(), c.size());
    }
  }
}

TEST(RefineAndSeparate, WellSeparatedClustersKeepEverything) {
  ModelMeasure m = catalog_measure("union");
  AtomCloud c = sample_atoms(m, 100);
  std::vector<Cluster> parts(2);
  for (size_t i = 0; i < c.size(); ++i) parts[c.piece[i]].push_back(i);
  Box W = c.bbox().inflated(0.5);
  Separation s = refine_and_separate(c, parts, 0.01, W);
  EXPECT_EQ(s.dropped_mass, 0.0);
  EXPECT_EQ(s.clusters.size(), 2u);
  EXPECT_GT(s.d_min, 0.0);
  EXPECT_EQ(min_box_gap(s.bbox), s.d_min);
  // outer boxes are pairwise disjoint and inside W
  EXPECT_GT(box_gap(s.outer[0], s.outer[1]), 0.0);
  for (size_t k = 0; k < 2; ++k) {
    EXPECT_TRUE(W.contains_strictly(s.outer[k]));
    EXPECT_TRUE(s.outer[k].contains_strictly(s.inner[k]));
    EXPECT_TRUE(s.inner[k].contains_strictly(s.bbox[k]));
  }
}

TEST(RefineAndSeparate, InterleavedClustersDropLightAtoms) {
  ModelMeasure m;
  m.add(GraphCarrier::make({0, 1}, {0, 0}, parse_expr("0", 1), Box({0}, {1})), 1.0);
  AtomCloud c = sample_atoms(m, 100);
  // the first cluster overlaps the second by three atoms
  std::vector<Cluster> parts(2);
  for (size_t i = 0; i < c.size(); ++i) parts[c.point(i)[0] < 0.5 ? 0 : 1].push_back(i);
  parts[0].push_back(parts[1][0]);
  parts[0].push_back(parts[1][1]);
  parts[1].erase(parts[1].begin(), parts[1].begin() + 2);
  parts[1].push_back(parts[0][10]);
  Box W({-1, -1}, {2, 1});
  Separation s = refine_and_separate(c, parts, 0.2, W);
  EXPECT_GT(s.d_min, 0.0);
  EXPECT_GT(s.dropped_mass, 0.0);
  EXPECT_LT(s.dropped_mass, 0.2);
  EXPECT_NEAR(s.dropped_mass, 0.01 * s.dropped_ids.size(), 1e-12);
  EXPECT_THROW(refine_and_separate(c, parts, 1e-4, W), Error);
}

TEST(RunScheme, ZeroFieldGivesZero) {
  Fixture s = make_fixture("segment", {0, 1}, 100);
  SchemeResult r = run_scheme(Box({-1, -1}, {2, 1}), s.nu, s.cone, field("0", 2), 0.5, 0.5, s.width);
  EXPECT_EQ(r.M, 0.0);
  EXPECT_EQ(r.N, 0);
  EXPECT_TRUE(r.stages.empty());
  double x[2] = {0.3, 0.0};
  EXPECT_EQ(r.u.value(x), 0.0);
  EXPECT_EQ(r.K.size(), 100u);
}

TEST(RunScheme, LinearFieldThreeStages) {
  Fixture s = make_fixture("segment", {0, 1}, 200);
  SchemeOptions opt;
  opt.t = 0.1;
  opt.residual_tol = 1.1e-3;
  ScalarField lambda = field("x1", 2);
  SchemeResult r = run_scheme(Box({-1, -1}, {2, 1}), s.nu, s.cone, lambda, 0.5, 0.5, s.width, opt);
  EXPECT_EQ(r.N, 3);
  EXPECT_EQ(r.t, 0.1);
  EXPECT_LE(r.residual_max, 1e-3);
  EXPECT_LE(r.residual_max, r.residual_bound);
  // the remaining residual is lambda - d_e u on K
  double worst = 0.0;
  for (size_t i = 0; i < r.K.size(); ++i) worst = std::max(worst, std::abs(lambda.value(r.K.point(i)) - de(r.u, r.K.point(i), s.cone.axis)));
  EXPECT_NEAR(worst, r.residual_max, 1e-12);
}

TEST(RunScheme, StageInvariantsAcrossCatalog) {
  struct Case {
    const char* name;
    Vec axis;
    int res;
    const char* lambda;
  };
  for (const Case& c : {Case{"segment", {0, 1}, 200, "1 + x1"}, Case{"sine", {0, 1}, 200, "sin(3*x1) + 0.5"},
                        Case{"cantor", {1, 0}, 8, "x1"}, Case{"tilted", {0.6, 0.8}, 200, "0.3 - x2"}}) {
    Fixture s = make_fixture(c.name, c.axis, c.res);
    const double eta = 0.5, delta = 0.5;
    ScalarField lambda = field(c.lambda, 2);
    SchemeResult r = run_scheme(Box({-1, -1}, {2, 2}), s.nu, s.cone, lambda, eta, delta, s.width);
    ASSERT_FALSE(r.truncated) << c.name;
    EXPECT_LT(r.dropped_total(), eta) << c.name;
    EXPECT_LE(r.certified_grad, (1 + delta) * r.c_alpha * r.M * (1 + 1e-12)) << c.name;
    EXPECT_LE(r.certified_sup, eta) << c.name;
    double kept = r.K.mass();
    EXPECT_NEAR(kept + r.dropped_total(), s.nu.mass(), 1e-12) << c.name;
    int prev_retained = static_cast<int>(s.nu.size());
    for (const StageLog& st : r.stages) {
      EXPECT_LE(st.residual_max, st.bound * (1 + 1e-12)) << c.name << " stage " << st.n;
      EXPECT_LE(st.grad_cert, st.grad_bound * (1 + 1e-12));
      EXPECT_LE(st.sup_cert, st.sup_bound * (1 + 1e-12));
      EXPECT_LT(st.dropped_mass, st.budget);
      EXPECT_LE(st.retained, prev_retained);
      EXPECT_LE(st.active, st.clusters);
      prev_retained = st.retained;
    }
    // sampled gradient and sup stay within the certified sums
    Rng rng(1);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::array<double, kMaxDim> g;
    for (int k = 0; k < 20000; ++k) {
      double x[2] = {r.W.lo[0] + (r.W.hi[0] - r.W.lo[0]) * U(rng), r.W.lo[1] + (r.W.hi[1] - r.W.lo[1]) * U(rng)};
      double v = r.u.value_grad(x, g.data());
      ASSERT_LE(std::abs(v), r.certified_sup * (1 + 1e-9) + 1e-300);
      ASSERT_LE(std::hypot(g[0], g[1]), r.certified_grad * (1 + 1e-9) + 1e-300);
    }
  }
}

TEST(RunScheme, ConstantFieldRealisedOnSegment) {
  Fixture s = make_fixture("segment", {0, 1}, 150);
  SchemeResult r = run_scheme(Box({-1, -1}, {2, 1}), s.nu, s.cone, field("2", 2), 0.5, 0.5, s.width);
  EXPECT_EQ(r.M, 2.0);
  for (size_t i = 0; i < r.K.size(); ++i) EXPECT_NEAR(de(r.u, r.K.point(i), s.cone.axis), 2.0, r.residual_bound + 1e-12);
}

TEST(RunScheme, AtomsOutsideUAreDroppedFirst) {
  Fixture s = make_fixture("segment", {0, 1}, 100);
  // U cuts off the last two atoms: mass 0.02 < eta/2
  SchemeResult r = run_scheme(Box({-1, -1}, {0.98, 1}), s.nu, s.cone, field("1", 2), 0.5, 0.5, s.width);
  EXPECT_NEAR(r.initial_dropped, 0.02, 1e-12);
  EXPECT_EQ(r.initial_dropped_ids.size(), 2u);
  EXPECT_THROW(run_scheme(Box({-1, -1}, {0.5, 1}), s.nu, s.cone, field("1", 2), 0.5, 0.5, s.width), Error);
}

TEST(RunScheme, Deterministic) {
  Fixture s = make_fixture("sine", {0, 1}, 120);
  auto go = [&] { return run_scheme(Box({-1, -1}, {2, 2}), s.nu, s.cone, field("x1*x1", 2), 0.3, 0.2, s.width).log_json().dump(); };
  EXPECT_EQ(go(), go());
}
