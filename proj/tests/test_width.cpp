#include <gtest/gtest.h>

#include "lusin/scenario.hpp"

using namespace lusin;

namespace {

struct Built {
  AtomCloud E;
  Certificate cert;
  WidthFunction w;
};

Built build(const std::string& name, const Vec& axis, double alpha, double zeta, int res = 200) {
  ModelMeasure m = catalog_measure(name);
  const Carrier& car = m.pieces[0].carrier;
  Certificate cert = cone_null_certificate(car, Cone(axis, alpha));
  if (!cert.ok) throw Error(cert.reason);
  AtomCloud E = sample_atoms(m, res);
  return {E, cert, WidthFactory::for_carrier(car, cert).build(E, zeta)};
}

bool passes(const Report& r, const std::string& check) { return r.find(check) && r.at(check).pass; }

}  // namespace

TEST(WidthForGraph, FlatSegment) {
  Built b = build("segment", {0, 1}, kPi / 4, 0.1);
  Report r = verify_width(b.w, 200);
  EXPECT_TRUE(r.pass()) << r.to_json().dump(1);
  EXPECT_EQ(b.w.generation, -1);
  // phi depends on x2 only and has slope 1 along e on the segment
  double x[2] = {0.37, 0.0}, g[2];
  b.w.phi.value_grad(x, g);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 1.0);
  x[1] = 0.3;
  EXPECT_EQ(b.w.phi.value_grad(x, g), b.w.phi.expr->value(x));
  EXPECT_EQ(g[1], 0.0);
}

TEST(WidthForGraph, SineGraph) {
  Built b = build("sine", {0, 1}, kPi / 4, 0.1);
  EXPECT_NEAR(b.cert.slope, 0.5, 1e-9);
  Report r = verify_width(b.w, 300);
  EXPECT_TRUE(r.pass()) << r.to_json().dump(1);
  // the transverse derivative is bounded by the certified slope, below 1/tan(alpha)
  EXPECT_LE(r.at("transverse_max").value, b.cert.slope + 1e-9);
}

TEST(WidthForGraph, CurveCoordinateGradientMatchesFiniteDifferences) {
  Built b = build("sine", {0, 1}, kPi / 4, 0.2);
  Rng rng(2);
  std::uniform_real_distribution<double> U(-0.1, 1.1), V(-0.2, 0.2);
  for (int t = 0; t < 1000; ++t) {
    double s = U(rng);
    double x[2] = {s, 0.5 * std::sin(s) + V(rng)}, g[2];
    b.w.phi.value_grad(x, g);
    for (int k = 0; k < 2; ++k) {
      double xp[2] = {x[0], x[1]}, xm[2] = {x[0], x[1]};
      xp[k] += 1e-7;
      xm[k] -= 1e-7;
      ASSERT_NEAR((b.w.phi.value(xp) - b.w.phi.value(xm)) / 2e-7, g[k], 1e-5);
    }
  }
}

TEST(WidthForGraph, TiltedSegmentAndPlaneInSpace) {
  Built b = build("tilted", {0.6, 0.8}, kPi / 3, 0.05);
  EXPECT_TRUE(verify_width(b.w, 200).pass());

  ModelMeasure m;
  m.add(GraphCarrier::make({0, 0, 1}, {0, 0, 0}, parse_expr("0.2*x1 + 0.1*x2", 2), Box({0, 0}, {1, 1})), 1.0);
  Certificate cert = cone_null_certificate(m.pieces[0].carrier, Cone({0, 0, 1}, kPi / 4));
  ASSERT_TRUE(cert.ok);
  AtomCloud E = sample_atoms(m, 30);
  WidthFunction w = WidthFactory::for_carrier(m.pieces[0].carrier, cert).build(E, 0.1);
  EXPECT_TRUE(verify_width(w, 200).pass());
}

TEST(WidthForGraph, OffCarrierTargetRejected) {
  Built b = build("segment", {0, 1}, kPi / 4, 0.1);
  AtomCloud E = b.E;
  E.x[1] = 0.3;
  EXPECT_THROW(WidthFactory::for_carrier(catalog_measure("segment").pieces[0].carrier, b.cert).build(E, 0.1), Error);
  EXPECT_THROW(WidthFactory::for_carrier(catalog_measure("segment").pieces[0].carrier, b.cert).build(b.E, 0.0), Error);
}

TEST(WidthForIfs, CantorTenthNeedsGenerationEight) {
  Built b = build("cantor", {1, 0}, kPi / 4, 0.1, 8);
  EXPECT_EQ(ifs_cover_generation(b.cert, 0.1), 8);
  EXPECT_EQ(b.w.generation, 8);
  // (2/3)^7 > 0.05 >= (2/3)^8
  EXPECT_GT(std::pow(2.0 / 3.0, 7), 0.05);
  EXPECT_LE(std::pow(2.0 / 3.0, 8), 0.05);
  Report r = verify_width(b.w, 400);
  EXPECT_TRUE(r.pass()) << r.to_json().dump(1);
  EXPECT_EQ(r.at("transverse_max").value, 0.0);
}

TEST(WidthForIfs, ObliqueAxisAndThreeMapCantor) {
  for (const char* name : {"cantor", "cantor3"}) {
    Built b = build(name, normalized({1, 0.3}), kPi / 4, 0.02, 9);
    Report r = verify_width(b.w, 300);
    EXPECT_TRUE(r.pass()) << name << r.to_json().dump(1);
  }
}

TEST(WidthForIfs, CoverCapExceeded) {
  Built b = build("cantor", {1, 0}, kPi / 4, 0.1, 8);
  EXPECT_THROW(width_for_ifs(b.cert, b.E, 1e-9, 20), Error);
}

TEST(VerifyWidth, ScaledPhiBreaksSlopeBound) {
  Built b = build("segment", {0, 1}, kPi / 4, 0.1);
  WidthFunction bad = b.w;
  bad.phi.expr = make_scale(1.5, b.w.phi.expr);
  Report r = verify_width(bad, 200);
  EXPECT_FALSE(r.pass());
  EXPECT_FALSE(passes(r, "de_phi_max"));
  EXPECT_NEAR(r.at("de_phi_max").value, 1.5, 1e-12);
}

TEST(VerifyWidth, HalvedZetaBreaksRangeBound) {
  for (const char* name : {"segment", "cantor"}) {
    Built b = build(name, name[0] == 's' ? Vec{0, 1} : Vec{1, 0}, kPi / 4, 0.1, name[0] == 's' ? 200 : 8);
    WidthFunction bad = b.w;
    bad.zeta = 0.05;
    Report r = verify_width(bad, 200);
    EXPECT_FALSE(passes(r, "phi_max")) << name;
    EXPECT_TRUE(passes(r, "de_phi_max")) << name;
  }
}

TEST(VerifyWidth, ShiftedPhiMissesTarget) {
  Built b = build("segment", {0, 1}, kPi / 4, 0.1);
  WidthFunction bad = b.w;
  bad.phi.expr = make_compose(b.w.phi.expr, {make_coord(2, 0), make_sum(make_coord(2, 1), make_const(2, 0.04))});
  EXPECT_FALSE(passes(verify_width(bad, 100), "exactness_on_target"));
}

TEST(WidthSweep, ZetaDownToTenThousandth) {
  for (double zeta : {1e-1, 1e-2, 1e-3, 1e-4}) {
    for (const char* name : {"segment", "sine", "cantor"}) {
      bool ifs = std::string(name) == "cantor";
      Built b = build(name, ifs ? Vec{1, 0} : Vec{0, 1}, kPi / 4, zeta, ifs ? 10 : 200);
      Report r = verify_width(b.w, 200);
      EXPECT_TRUE(r.pass()) << name << " zeta " << zeta << r.to_json().dump(1);
    }
  }
}

TEST(WidthSweep, PlateauRiseNeverExceedsZeta) {
  for (double zeta : {0.3, 0.05, 0.007}) {
    Built b = build("cantor3", {1, 0}, kPi / 4, zeta, 7);
    auto H = std::dynamic_pointer_cast<const ApplyNode>(b.w.phi.expr);
    ASSERT_TRUE(H);
    auto P = std::dynamic_pointer_cast<const PlateauFn>(H->fn());
    ASSERT_TRUE(P);
    EXPECT_LE(P->rise(), zeta);
  }
}
