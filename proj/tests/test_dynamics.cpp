#include <gtest/gtest.h>

#include <sstream>

#include "fixtures.hpp"
#include "hyperm/dynamics.hpp"
#include "hyperm/rng.hpp"

using namespace hyperm;
using hyperm::testing::two_half_square;

namespace {

// Independent oracle: fly the constant heading u = (r - dT)/T and return the end point.
Vec2 fly(const Vec2& x, const Vec2& y, const Vec2& d, double t) {
  const Vec2 u = ((y - x) - d * t) / t;
  return x + t * (d + u.normalized());
}

}  // namespace

TEST(MinTransitTime, FrozenExamples) {
  EXPECT_DOUBLE_EQ(min_transit_time(Vec2(0, 0), Vec2(3, 4), Vec2(0, 0)), 5.0);
  EXPECT_NEAR(min_transit_time(Vec2(0, 0), Vec2(1, 0), Vec2(0.5, 0)), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(min_transit_time(Vec2(0, 0), Vec2(1, 0), Vec2(-0.5, 0)), 2.0, 1e-15);
  EXPECT_EQ(min_transit_time(Vec2(1, 1), Vec2(1, 1), Vec2(0.3, 0.1)), 0.0);
}

TEST(MinTransitTime, UnreachableForStrongDrift) {
  EXPECT_THROW(min_transit_time(Vec2(0, 0), Vec2(1, 0), Vec2(1.0, 0.0)), UnreachableError);
  EXPECT_THROW(min_transit_time(Vec2(0, 0), Vec2(1, 0), Vec2(0.0, -1.5)), UnreachableError);
}

TEST(MinTransitTime, FuzzPlugBackAndBounds) {
  Rng rng = make_stream(2024, "zermelo");
  for (int i = 0; i < 1000; ++i) {
    const Vec2 x(uniform(rng, -2, 2), uniform(rng, -2, 2));
    const Vec2 y(uniform(rng, -2, 2), uniform(rng, -2, 2));
    const double ang = uniform(rng, 0, 2 * M_PI);
    const Vec2 d = uniform(rng, 0, 0.9) * Vec2(std::cos(ang), std::sin(ang));
    const double t = min_transit_time(x, y, d);
    const double r = (y - x).norm();
    EXPECT_LE(r / (1 + d.norm()), t * (1 + 1e-12));
    EXPECT_GE(r / (1 - d.norm()), t * (1 - 1e-12));
    EXPECT_LT((fly(x, y, d, t) - y).norm(), 1e-9);
  }
}

TEST(TransitPlan, ControlHasUnitNormAndHitsEndpoint) {
  const Box box{Vec2(-1, -1), Vec2(2, 2)};
  const Region r(0, box.halfspaces(), Vec2(0.5, 0), box);
  const TransitPlan p = transit_plan(Vec2(0, 0), Vec2(1, 0), r);
  EXPECT_NEAR(p.duration, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR((p.control - Vec2(1, 0)).norm(), 0.0, 1e-12);
  EXPECT_LT((p.position(p.duration) - Vec2(1, 0)).norm(), 1e-9);

  const TransitPlan still = transit_plan(Vec2(0.5, 0.5), Vec2(0.5, 0.5), r);
  EXPECT_EQ(still.duration, 0.0);
  EXPECT_EQ(still.control, Vec2::Zero());
}

TEST(TransitPlan, RejectsPointsOutsideRegion) {
  const Partition p = two_half_square();
  EXPECT_THROW(transit_plan(Vec2(0.1, 0.1), Vec2(0.9, 0.1), p.region(0)), GeometryError);
}

TEST(IntegratePath, ZeroDriftStraightLine) {
  const Partition p = two_half_square();
  const PathTrace tr = integrate_path(Vec2(0, 0.5), [](double) { return Vec2(1, 0); }, p, 1.0, 0.1);
  EXPECT_NEAR((tr.positions.back() - Vec2(1, 0.5)).norm(), 0.0, 1e-12);
  EXPECT_NEAR(tr.times.back(), 1.0, 1e-12);
  EXPECT_EQ(tr.regions.front(), 0);
  EXPECT_EQ(tr.regions.back(), 1);
}

TEST(IntegratePath, DriftSwitchesAtFacet) {
  // Left half drifts up at 0.5, right half has no drift. Crossing at t = 0.5.
  const Partition p = two_half_square(Vec2(0, 0.5), Vec2::Zero());
  const PathTrace tr = integrate_path(Vec2(0, 0), [](double) { return Vec2(1, 0); }, p, 0.8, 0.07);
  EXPECT_NEAR(tr.positions.back().x(), 0.8, 1e-9);
  EXPECT_NEAR(tr.positions.back().y(), 0.25, 1e-9);
  bool crossing = false;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    if (std::abs(tr.times[i] - 0.5) < 1e-8) crossing = true;
  }
  EXPECT_TRUE(crossing);
}

TEST(IntegratePath, LeavingTheMissionSpaceIsAnError) {
  const Partition p = two_half_square();
  EXPECT_THROW(integrate_path(Vec2(0.9, 0.5), [](double) { return Vec2(1, 0); }, p, 1.0, 0.1), GeometryError);
}

TEST(IntegratePath, CsvHasHeaderAndOneRowPerSample) {
  const Partition p = two_half_square();
  const PathTrace tr = integrate_path(Vec2(0.1, 0.1), [](double) { return Vec2(0, 1); }, p, 0.5, 0.1);
  std::ostringstream os;
  write_csv(os, tr);
  const std::string s = os.str();
  EXPECT_EQ(s.rfind("t,x,y,region,ux,uy\n", 0), 0u);
  EXPECT_EQ(static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')), tr.size() + 1);
}
