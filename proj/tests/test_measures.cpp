#include <gtest/gtest.h>

#include <set>

#include "lusin/scenario.hpp"

using namespace lusin;

namespace {

GraphCarrier segment() { return GraphCarrier::make({0, 1}, {0, 0}, parse_expr("0", 1), Box({0}, {1})); }

IFSCarrier cantor(int cap = 12) { return IFSCarrier::make({1.0 / 3, 1.0 / 3}, {{0, 0}, {2.0 / 3, 0}}, Box({0, 0}, {1, 0}), {1, 0}, cap); }

// generation-n middle-thirds cell centres from ternary digits in {0, 2}
std::vector<double> cantor_centres(int n) {
  std::vector<double> out;
  for (int a = 0; a < (1 << n); ++a) {
    double x = 0.0, scale = 1.0;
    for (int k = n - 1; k >= 0; --k) {
      scale /= 3.0;
      x += ((a >> k) & 1 ? 2.0 : 0.0) * scale;
    }
    out.push_back(x + 0.5 * scale);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST(SampleAtoms, UnitSegmentHundredAtoms) {
  ModelMeasure m;
  m.add(segment(), 1.0);
  AtomCloud c = sample_atoms(m, 100);
  ASSERT_EQ(c.size(), 100u);
  std::vector<double> xs;
  for (size_t i = 0; i < c.size(); ++i) {
    EXPECT_NEAR(c.w[i], 0.01, 1e-15);
    EXPECT_EQ(c.point(i)[1], 0.0);
    xs.push_back(c.point(i)[0]);
  }
  std::sort(xs.begin(), xs.end());
  for (int i = 0; i < 100; ++i) EXPECT_NEAR(xs[i], (i + 0.5) / 100, 1e-14);
  EXPECT_NEAR(c.mass(), 1.0, 1e-12);
}

TEST(SampleAtoms, CantorGenerationFive) {
  ModelMeasure m;
  m.add(cantor(), 1.0);
  AtomCloud c = sample_atoms(m, 5);
  ASSERT_EQ(c.size(), 32u);
  std::vector<double> xs;
  for (size_t i = 0; i < c.size(); ++i) {
    EXPECT_NEAR(c.w[i], 1.0 / 32, 1e-15);
    xs.push_back(c.point(i)[0]);
  }
  std::sort(xs.begin(), xs.end());
  std::vector<double> want = cantor_centres(5);
  for (int i = 0; i < 32; ++i) EXPECT_NEAR(xs[i], want[i], 1e-14);
}

TEST(SampleAtoms, GenerationCapLimitsDepth) {
  ModelMeasure m;
  m.add(cantor(4), 1.0);
  EXPECT_EQ(sample_atoms(m, 9).size(), 16u);
}

TEST(SampleAtoms, UnionMassesPerPiece) {
  ModelMeasure m;
  m.add(segment(), 0.3);
  m.add(GraphCarrier::make({1, 0}, {1.5, 0}, parse_expr("0", 1), Box({-0.5}, {0.5})), 0.7);
  AtomCloud c = sample_atoms(m, 50);
  double p0 = 0.0, p1 = 0.0;
  for (size_t i = 0; i < c.size(); ++i) (c.piece[i] == 0 ? p0 : p1) += c.w[i];
  EXPECT_NEAR(p0, 0.3, 1e-12);
  EXPECT_NEAR(p1, 0.7, 1e-12);
  EXPECT_NEAR(c.mass(), m.total_mass(), 1e-12);
}

TEST(SampleAtoms, CurvedGraphWeightsFollowArcLength) {
  ModelMeasure m = catalog_measure("sine");
  AtomCloud c = sample_atoms(m, 400);
  // weight ratio of two atoms equals the ratio of sqrt(1 + p'^2)
  auto speed = [](double s) { return std::sqrt(1.0 + 0.25 * std::cos(s) * std::cos(s)); };
  double s0 = c.par(0)[0], s1 = c.par(399)[0];
  EXPECT_NEAR(c.w[0] / c.w[399], speed(s0) / speed(s1), 1e-12);
  for (size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c.point(i)[1], 0.5 * std::sin(c.point(i)[0]), 1e-15);
}

TEST(SampleAtoms, MassWithinQuadratureToleranceForCatalog) {
  for (const char* name : {"segment", "sine", "cantor", "cantor3", "union", "cross", "tilted"}) {
    ModelMeasure m = catalog_measure(name);
    for (int res : {1, 7, 200}) EXPECT_NEAR(sample_atoms(m, res).mass(), m.total_mass(), 1e-9) << name << " " << res;
  }
}

TEST(SampleAtoms, RejectsBadResolution) {
  ModelMeasure m;
  m.add(segment(), 1.0);
  EXPECT_THROW(sample_atoms(m, 0), Error);
  ModelMeasure plane;
  plane.add(GraphCarrier::make({0, 0, 1}, {0, 0, 0}, parse_expr("0", 2), Box({0, 0}, {1, 1})), 1.0);
  EXPECT_THROW(sample_atoms(plane, 100000), Error);
  ModelMeasure deep;
  deep.add(cantor(40), 1.0);
  EXPECT_THROW(sample_atoms(deep, 40), Error);
}

TEST(BundleAt, SegmentTangent) {
  ModelMeasure m;
  m.add(segment(), 1.0);
  Subspace L = bundle_at(m, {0.3, 0.0});
  ASSERT_EQ(L.dim(), 1);
  EXPECT_NEAR(std::abs(L.basis[0][0]), 1.0, 1e-15);
  EXPECT_NEAR(L.basis[0][1], 0.0, 1e-15);
}

TEST(BundleAt, CantorAtomIsZero) {
  ModelMeasure m;
  m.add(cantor(), 1.0);
  AtomCloud c = sample_atoms(m, 6);
  for (size_t i = 0; i < c.size(); ++i) {
    EXPECT_EQ(bundle_at(m, c.point_vec(i)).dim(), 0);
    EXPECT_EQ(bundle_for_atom(m, c, i).dim(), 0);
  }
}

TEST(BundleAt, SineGraphAtOrigin) {
  ModelMeasure m = catalog_measure("sine");
  Subspace L = bundle_at(m, {0.0, 0.0});
  ASSERT_EQ(L.dim(), 1);
  Vec want = normalized({1.0, 0.5});
  EXPECT_NEAR(std::abs(dot(L.basis[0], want)), 1.0, 1e-14);
  // tangent from a finite difference of the embedded curve
  GraphCarrier g = std::get<GraphCarrier>(m.pieces[0].carrier);
  for (double s : {0.1, 0.4, 0.9}) {
    double a = s + 1e-6, b = s - 1e-6;
    Vec pa = g.point(&a), pb = g.point(&b);
    Vec fd = normalized({pa[0] - pb[0], pa[1] - pb[1]});
    Subspace Ls = bundle_at(m, g.point(&s));
    EXPECT_NEAR(std::abs(dot(Ls.basis[0], fd)), 1.0, 1e-10);
  }
}

TEST(BundleAt, UnattributablePointRejected) {
  ModelMeasure m;
  m.add(segment(), 1.0);
  EXPECT_THROW(bundle_at(m, {0.5, 0.3}), Error);
  EXPECT_THROW(bundle_at(m, {0.5}), Error);
}

TEST(BundleAt, NeverFullForCatalog) {
  for (const char* name : {"segment", "sine", "cantor", "cantor3", "union", "cross", "tilted"}) {
    ModelMeasure m = catalog_measure(name);
    AtomCloud c = sample_atoms(m, 64);
    for (size_t i = 0; i < c.size(); ++i) ASSERT_LT(bundle_for_atom(m, c, i).dim(), m.d) << name;
  }
}

TEST(BundleAt, EveryAtomHasATransverseNetDirection) {
  for (double delta : {0.5, 0.1}) {
    AlphaChoice ac = pick_alpha_deltatilde(delta);
    DirectionNet net = build_direction_net(2, ac.alpha);
    for (const char* name : {"segment", "sine", "cantor", "cantor3", "union", "cross", "tilted"}) {
      ModelMeasure m = catalog_measure(name);
      AtomCloud c = sample_atoms(m, 200);
      for (size_t i = 0; i < c.size(); ++i) ASSERT_GE(first_transverse(net, bundle_for_atom(m, c, i)), 0) << name;
    }
  }
}

TEST(ConeNullCertificate, FlatSegment) {
  Certificate c = cone_null_certificate(Carrier(segment()), Cone({0, 1}, kPi / 4));
  EXPECT_TRUE(c.ok) << c.reason;
  // interval enclosure of a zero derivative may leave a denormal
  EXPECT_LE(c.slope, 1e-300);
  EXPECT_EQ(c.kind, Certificate::Kind::Graph);
}

TEST(ConeNullCertificate, CantorCoverDecay) {
  Certificate c = cone_null_certificate(Carrier(cantor()), Cone({1, 0}, kPi / 4));
  ASSERT_TRUE(c.ok) << c.reason;
  EXPECT_NEAR(c.decay, 2.0 / 3.0, 1e-15);
  for (int n = 0; n <= 20; ++n) EXPECT_NEAR(c.cover_length(n), std::pow(2.0 / 3.0, n) * 1.0, 1e-12);
}

TEST(ConeNullCertificate, CoverLengthDecayMatchesRatioSum) {
  for (const char* name : {"cantor", "cantor3"}) {
    IFSCarrier f = std::get<IFSCarrier>(catalog_measure(name).pieces[0].carrier);
    Certificate c = cone_null_certificate(f, Cone({0.6, 0.8}, kPi / 3));
    ASSERT_TRUE(c.ok);
    double len0 = f.projected_base_length({0.6, 0.8});
    EXPECT_NEAR(len0, 0.6, 1e-15);
    for (int n = 0; n <= 15; ++n) EXPECT_NEAR(c.cover_length(n), std::pow(f.ratio_sum(), n) * len0, 1e-12);
  }
}

TEST(ConeNullCertificate, SteepGraphRejected) {
  // profile with Lipschitz constant 2 against a cone with 1/tan(alpha) = 1
  GraphCarrier g = GraphCarrier::make({0, 1}, {0, 0}, parse_expr("2*x1", 1), Box({0}, {1}));
  EXPECT_NEAR(g.lip_profile, 2.0, 1e-12);
  Certificate c = cone_null_certificate(Carrier(g), Cone({0, 1}, kPi / 4));
  EXPECT_FALSE(c.ok);
  EXPECT_NE(c.reason.find("lip_profile"), std::string::npos) << c.reason;
}

TEST(ConeNullCertificate, FourCornerCantorRejected) {
  // ratio sum 1 along the axis: excluded class
  IFSCarrier f = IFSCarrier::make({0.25, 0.25, 0.25, 0.25}, {{0, 0}, {0.75, 0}, {0, 0.75}, {0.75, 0.75}}, Box({0, 0}, {1, 1}), {1, 0}, 8);
  Certificate c = cone_null_certificate(f, Cone({1, 0}, kPi / 4));
  EXPECT_FALSE(c.ok);
  EXPECT_NE(c.reason.find("ratios"), std::string::npos);
}

TEST(ConeNullCertificate, OverlappingImagesRejected) {
  IFSCarrier f = IFSCarrier::make({0.4, 0.4}, {{0, 0}, {0.3, 0}}, Box({0, 0}, {1, 0}), {1, 0}, 8);
  EXPECT_FALSE(f.open_set_condition());
  EXPECT_FALSE(cone_null_certificate(f, Cone({1, 0}, kPi / 4)).ok);
  EXPECT_TRUE(cantor().open_set_condition());
}

TEST(ConeNullCertificate, TiltedPlaneInSpace) {
  GraphCarrier g = GraphCarrier::make({0, 0, 1}, {0, 0, 0}, parse_expr("0.2*x1 + 0.1*x2", 2), Box({0, 0}, {1, 1}));
  EXPECT_TRUE(g.is_affine());
  Vec n = normalized({-0.2, -0.1, 1.0});
  Certificate c = cone_null_certificate(g, Cone(n, kPi / 4));
  ASSERT_TRUE(c.ok) << c.reason;
  EXPECT_TRUE(c.planar_hyperplane);
  EXPECT_NEAR(c.slope, 0.0, 1e-12);
  // the tilt of the plane against e3 is |grad p| = sqrt(0.05)
  Certificate e3 = cone_null_certificate(g, Cone({0, 0, 1}, kPi / 4));
  EXPECT_NEAR(e3.slope, std::sqrt(0.05), 1e-12);
}

TEST(ConeNullCertificate, LipschitzProfileDominatesSampledQuotients) {
  Rng rng(4);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (const char* src : {"0.5*sin(x1)", "0.3*x1*x1 - 0.1", "0.2*cos(3*x1) + 0.1*x1"}) {
    GraphCarrier g = GraphCarrier::make({0, 1}, {0, 0}, parse_expr(src, 1), Box({0}, {1}));
    for (int t = 0; t < 10000; ++t) {
      double a = U(rng), b = U(rng);
      if (a == b) continue;
      double q = std::abs(g.profile->value(&a) - g.profile->value(&b)) / std::abs(a - b);
      ASSERT_LE(q, g.lip_profile * (1 + 1e-12)) << src;
    }
  }
}

TEST(EmpiricalConeNull, TransverseSegmentDecays) {
  ConeNullReport r = empirical_cone_null_test(Carrier(segment()), Cone({0, 1}, kPi / 4), 200, 1);
  EXPECT_TRUE(r.decays);
  // estimate scales like the thickening
  for (size_t k = 1; k < r.estimate.size(); ++k) EXPECT_LE(r.estimate[k], 0.75 * r.estimate[k - 1] + 1e-12);
}

TEST(EmpiricalConeNull, SegmentAlongTheConeDoesNotDecay) {
  ConeNullReport r = empirical_cone_null_test(Carrier(segment()), Cone({1, 0}, 0.05), 200, 1);
  EXPECT_FALSE(r.decays);
  EXPECT_GT(r.estimate.back(), 0.1 * r.estimate.front());
}

TEST(EmpiricalConeNull, CantorDecaysForSeveralCones) {
  for (Vec axis : {Vec{1, 0}, Vec{0.6, 0.8}, Vec{0, 1}}) {
    ConeNullReport r = empirical_cone_null_test(Carrier(cantor()), Cone(axis, kPi / 4), 200, 2);
    EXPECT_TRUE(r.decays) << axis[0] << "," << axis[1];
  }
}

TEST(InnerRegularRefine, NothingFlagged) {
  ModelMeasure m;
  m.add(segment(), 1.0);
  AtomCloud c = sample_atoms(m, 100);
  DropResult r = inner_regular_refine(c, 0.01, [](size_t) { return false; });
  EXPECT_EQ(r.kept.size(), 100u);
  EXPECT_EQ(r.kept.x, c.x);
  EXPECT_EQ(r.dropped_mass, 0.0);
}

TEST(InnerRegularRefine, ThreeAtomsWithinBudget) {
  ModelMeasure m;
  m.add(segment(), 1.0);
  AtomCloud c = sample_atoms(m, 100);
  DropResult r = inner_regular_refine(c, 0.05, [](size_t i) { return i == 3 || i == 50 || i == 77; });
  EXPECT_EQ(r.kept.size(), 97u);
  EXPECT_NEAR(r.dropped_mass, 0.03, 1e-15);
  EXPECT_NEAR(r.kept.mass() + r.dropped_mass, c.mass(), 1e-12);
  EXPECT_EQ(std::set<int>(r.dropped_ids.begin(), r.dropped_ids.end()), (std::set<int>{3, 50, 77}));
}

TEST(InnerRegularRefine, InfeasibleBudgetNamesPredicate) {
  ModelMeasure m;
  m.add(segment(), 1.0);
  AtomCloud c = sample_atoms(m, 100);
  try {
    inner_regular_refine(c, 0.01, [](size_t i) { return i < 3; }, "near the boundary");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("near the boundary"), std::string::npos);
  }
}

TEST(InnerRegularRefine, SmallestWeightsFirst) {
  ModelMeasure m = catalog_measure("sine");
  AtomCloud c = sample_atoms(m, 50);
  DropResult r = inner_regular_refine(c, 1.0, [](size_t i) { return i % 5 == 0; });
  for (size_t k = 1; k < r.dropped_ids.size(); ++k) EXPECT_LE(c.w[r.dropped_ids[k - 1]], c.w[r.dropped_ids[k]]);
}

TEST(ModelMeasure, RejectsBadPieces) {
  ModelMeasure m;
  EXPECT_THROW(m.add(segment(), 0.0), Error);
  EXPECT_THROW(m.add(segment(), -1.0), Error);
  m.add(segment(), 1.0);
  GraphCarrier g3 = GraphCarrier::make({0, 0, 1}, {0, 0, 0}, parse_expr("0", 2), Box({0, 0}, {1, 1}));
  EXPECT_THROW(m.add(g3, 1.0), Error);
  EXPECT_THROW(IFSCarrier::make({1.0}, {{0, 0}}, Box({0, 0}, {1, 0}), {1, 0}, 5), Error);
  EXPECT_THROW(GraphCarrier::make({0, 1}, {0, 0}, parse_expr("x1", 2), Box({0}, {1})), Error);
}

TEST(ModelMeasure, TotalMassIsSumOfWeights) {
  ModelMeasure m = catalog_measure("union");
  EXPECT_NEAR(m.total_mass(), 1.0, 1e-12);
  EXPECT_THROW(catalog_measure("nonesuch"), Error);
}
