#include <gtest/gtest.h>

#include "lusin/cone.hpp"

using namespace lusin;

namespace {

// max of v.e over unit v in L, by sampling unit vectors of L
double sampled_max(const Subspace& L, const Vec& e, int samples, Rng& rng) {
  double best = -1.0;
  for (int s = 0; s < samples; ++s) {
    Vec c = random_unit(L.dim(), rng);
    Vec v(L.d, 0.0);
    for (int i = 0; i < L.dim(); ++i)
      for (int k = 0; k < L.d; ++k) v[k] += c[i] * L.basis[i][k];
    best = std::max(best, dot(v, e));
  }
  return best;
}

Vec neg(Vec v) {
  for (double& x : v) x = -x;
  return v;
}

}  // namespace

TEST(ConeContains, AxisAndOrthogonal) {
  Cone c({1, 0}, kPi / 4);
  EXPECT_TRUE(cone_contains(c, {1, 0}));
  EXPECT_FALSE(cone_contains(c, {0, 1}));
  EXPECT_TRUE(cone_contains(c, {0, 0}));
}

TEST(ConeContains, BoundaryDiagonal) {
  // (1,1).(1,0) = 1 and cos(pi/4) sqrt 2 = 1 up to rounding
  Cone c({1, 0}, kPi / 4);
  const double lhs = 1.0, rhs = std::cos(kPi / 4) * std::sqrt(2.0);
  EXPECT_NEAR(lhs, rhs, 1e-15);
  EXPECT_EQ(cone_contains(c, {1, 1}), lhs >= rhs);
  EXPECT_TRUE(cone_contains(c, {1, 0.999}));
  EXPECT_FALSE(cone_contains(c, {1, 1.001}));
}

TEST(ConeContains, RejectsNonFinite) {
  Cone c({1, 0}, kPi / 4);
  EXPECT_THROW(cone_contains(c, {std::nan(""), 0}), Error);
  EXPECT_THROW(cone_contains(c, {INFINITY, 0}), Error);
}

TEST(Cone, RejectsBadHalfAngle) {
  EXPECT_THROW(Cone({1, 0}, 0.0), Error);
  EXPECT_THROW(Cone({1, 0}, kPi / 2), Error);
}

TEST(SubspaceTransverse, LinesInThePlane) {
  Cone c({1, 0}, kPi / 4);
  EXPECT_TRUE(subspace_transverse(Subspace::span({{0, 1}}), c));
  EXPECT_FALSE(subspace_transverse(Subspace::span({{1, 0}}), c));
  EXPECT_TRUE(subspace_transverse(Subspace::zero(2), c));
  EXPECT_FALSE(subspace_transverse(Subspace::span({{1, 0}, {0, 1}}), c));
}

TEST(SubspaceTransverse, BoundaryIsNotTransverse) {
  // L is spanned by the unit vector making angle pi/2 - alpha with e, so |P_L e| = cos(alpha)
  Cone c({1, 0}, kPi / 3);
  const double ca = std::cos(c.half_angle);
  Subspace L{2, {{ca, std::sqrt(1.0 - ca * ca)}}};
  ASSERT_EQ(L.projection_norm(c.axis), ca);
  EXPECT_FALSE(subspace_transverse(L, c));
}

TEST(SubspaceTransverse, RejectsNonOrthonormalBasis) {
  Subspace L{2, {{2, 0}}};
  EXPECT_THROW(subspace_transverse(L, Cone({0, 1}, kPi / 4)), Error);
}

TEST(SubspaceTransverse, ProjectionMatchesSampledMaximum) {
  Rng rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    Subspace L = random_subspace(4, 2, rng);
    Vec e = random_unit(4, rng);
    double exact = L.projection_norm(e);
    double sampled = sampled_max(L, e, 100000, rng);
    EXPECT_LE(sampled, exact + 1e-12);
    EXPECT_GE(sampled, exact - 1e-6);
  }
}

TEST(SubspaceTransverse, ProjectionCriterionAgreesOnManyInstances) {
  Rng rng(7);
  std::uniform_real_distribution<double> A(0.05, kPi / 2 - 0.05);
  int disagreements = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    int d = 2 + trial % 3;
    int k = 1 + trial % (d - 1);
    Subspace L = random_subspace(d, k, rng);
    Vec e = random_unit(d, rng);
    Cone c(e, A(rng));
    double s = sampled_max(L, e, 200, rng);
    // a sampled v in L inside the cone refutes transversality
    if (s >= std::cos(c.half_angle) && subspace_transverse(L, c)) ++disagreements;
  }
  EXPECT_EQ(disagreements, 0);
}

TEST(SubspaceTransverse, ReflectedConeInvariance) {
  Rng rng(9);
  std::uniform_real_distribution<double> A(0.01, kPi / 2 - 0.01);
  for (int trial = 0; trial < 10000; ++trial) {
    int d = 2 + trial % 4;
    Subspace L = random_subspace(d, 1 + trial % (d - 1), rng);
    Vec e = random_unit(d, rng);
    double a = A(rng);
    ASSERT_EQ(subspace_transverse(L, Cone(e, a)), subspace_transverse(L, Cone(neg(e), a)));
  }
}

TEST(CAlpha, KnownValues) {
  EXPECT_NEAR(c_alpha(kPi / 4), 2.0, 1e-15);
  EXPECT_NEAR(c_alpha(kPi / 3), 1.5773502691896257, 1e-12);
  EXPECT_NEAR(c_alpha(kPi / 2 - 1e-9), 1.0, 1e-8);
  EXPECT_THROW(c_alpha(0.0), Error);
  EXPECT_THROW(c_alpha(kPi / 2), Error);
  EXPECT_THROW(c_alpha(-1.0), Error);
}

TEST(CAlpha, StrictlyDecreasing) {
  double prev = c_alpha(1e-3);
  for (int i = 2; i < 1570; ++i) {
    double cur = c_alpha(i * 1e-3);
    ASSERT_LT(cur, prev) << "alpha = " << i * 1e-3;
    prev = cur;
  }
}

TEST(NetAngle, HalfComplementSineBelowCosine) {
  for (int i = 1; i < 100000; ++i) {
    double a = (kPi / 2) * i / 100000.0;
    ASSERT_LT(std::sin((kPi / 2 - a) / 2), std::cos(a)) << "alpha = " << a;
  }
}

TEST(DirectionNet, PlaneQuarterPiHasEightDirections) {
  DirectionNet net = build_direction_net(2, kPi / 4);
  ASSERT_EQ(net.directions.size(), 8u);
  EXPECT_NEAR(net.geodesic_radius, kPi / 8, 1e-15);
  for (size_t j = 0; j < 8; ++j) {
    EXPECT_NEAR(norm(net.directions[j]), 1.0, 1e-12);
    double th = std::atan2(net.directions[j][1], net.directions[j][0]);
    double expect = 2 * kPi * j / 8;
    EXPECT_NEAR(std::remainder(th - expect, 2 * kPi), 0.0, 1e-12);
  }
  EXPECT_EQ(build_direction_net(2, 0.785).directions.size(), 8u);
}

TEST(DirectionNet, PlaneRandomLines) {
  DirectionNet net = build_direction_net(2, kPi / 4);
  Rng rng(3);
  for (int t = 0; t < 100000; ++t) ASSERT_GE(first_transverse(net, random_subspace(2, 1, rng)), 0);
}

TEST(DirectionNet, PlaneFineAngularGridEveryAlpha) {
  for (double a : {0.1, 0.4, kPi / 6, kPi / 4, kPi / 3, 1.3, 1.5}) {
    DirectionNet net = build_direction_net(2, a);
    for (int i = 0; i < 20000; ++i) {
      double th = kPi * i / 20000.0;
      Subspace L{2, {{std::cos(th), std::sin(th)}}};
      ASSERT_GE(first_transverse(net, L), 0) << "alpha " << a << " line angle " << th;
    }
  }
}

TEST(DirectionNet, SpaceSixthPiPassesVerification) {
  DirectionNet net = build_direction_net(3, kPi / 6);
  NetReport rep = verify_net(net, 3, 100000);
  EXPECT_EQ(rep.failures, 0);
  EXPECT_TRUE(rep.cover_ok);
}

TEST(DirectionNet, UnitDirections) {
  for (int d = 2; d <= 5; ++d) {
    DirectionNet net = build_direction_net(d, kPi / 3);
    for (const Vec& v : net.directions) ASSERT_NEAR(norm(v), 1.0, 1e-12);
  }
}

TEST(DirectionNet, Deterministic) {
  DirectionNet a = build_direction_net(4, kPi / 4, 5), b = build_direction_net(4, kPi / 4, 5);
  EXPECT_EQ(a.directions, b.directions);
}

TEST(DirectionNet, RejectsBadInput) {
  EXPECT_THROW(build_direction_net(1, kPi / 4), Error);
  EXPECT_THROW(build_direction_net(2, 0.0), Error);
  EXPECT_THROW(build_direction_net(3, kPi / 2), Error);
}

TEST(VerifyNet, DecimatedNetFails) {
  DirectionNet net = build_direction_net(2, kPi / 4);
  DirectionNet half = net;
  half.directions.clear();
  for (size_t j = 0; j < net.directions.size(); j += 2) half.directions.push_back(net.directions[j]);
  NetReport rep = verify_net(half, 2, 10000);
  EXPECT_FALSE(rep.pass());
  // lines still find a transverse cone away from the boundary angles, but
  // the covering radius breaks: the witness is at angle pi/4 from the net
  EXPECT_FALSE(rep.cover_ok);
  ASSERT_EQ(rep.cover_witness.size(), 2u);
  EXPECT_LT(rep.worst_cover_cosine, rep.required_cover_cosine);
  double best = -1.0;
  for (const Vec& v : half.directions) best = std::max(best, dot(rep.cover_witness, v));
  EXPECT_LT(best, std::cos(net.geodesic_radius));
  // the diagonal line sits on the boundary of every remaining cone
  Subspace diag = Subspace::span({{1, 1}});
  for (const Vec& v : half.directions) EXPECT_NEAR(diag.projection_norm(v), std::cos(half.half_angle), 1e-15);
}

TEST(VerifyNet, SingleDirectionFails) {
  DirectionNet one;
  one.d = 2;
  one.half_angle = kPi / 4;
  one.geodesic_radius = kPi / 8;
  one.directions = {{1, 0}};
  EXPECT_FALSE(verify_net(one, 2, 1000).pass());
  // the line along the axis meets the only cone
  EXPECT_LT(first_transverse(one, Subspace::span({{1, 0}})), 0);
}

TEST(VerifyNet, EmptyNetRejected) {
  DirectionNet none;
  none.d = 2;
  EXPECT_THROW(verify_net(none, 2, 10), Error);
}

TEST(RandomSubspace, OrthonormalFrames) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    Subspace L = random_subspace(5, 1 + t % 4, rng);
    EXPECT_NO_THROW(L.check_orthonormal());
  }
}
