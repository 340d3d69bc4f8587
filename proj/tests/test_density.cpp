#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "maad/density.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace maad;
using namespace maad::density;

namespace {

PointSet gaussian_points(std::size_t n, std::size_t d, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  std::vector<double> v(n * d);
  for (double& x : v) x = g(rng);
  return PointSet(d, v);
}

std::vector<std::vector<double>> rows(const PointSet& p) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < p.size(); ++i) out.emplace_back(p[i].begin(), p[i].end());
  return out;
}

}  // namespace

TEST(Density, SinglePointAtQuery) {
  const DensityModel m(PointSet(5, std::vector<double>(5, 0.0)), 1.0);
  const std::vector<double> z(5, 0.0);
  EXPECT_NEAR(m.log_density(z), -4.594692, 1e-6);
}

TEST(Density, EquidistantPointsEqualOneKernel) {
  PointSet p(2, {1, 0, -1, 0, 0, 1, 0, -1});
  const DensityModel m(p, 0.5);
  const DensityModel one(PointSet(2, {1, 0}), 0.5);
  const std::vector<double> z = {0, 0};
  EXPECT_NEAR(m.log_density(z), one.log_density(z), 1e-14);
}

TEST(Density, MatchesNaiveSum) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const PointSet p = gaussian_points(50, 5, seed);
    const PointSet q = gaussian_points(5, 5, seed + 100, 0.5);
    for (double h : {0.5, 1.0, 2.0}) {
      const DensityModel m(p, h);
      for (std::size_t i = 0; i < q.size(); ++i) {
        const std::vector<double> z(q[i].begin(), q[i].end());
        EXPECT_NEAR(m.log_density(q[i]), oracle::kde_log_density(rows(p), z, h), 1e-12);
      }
    }
  }
}

TEST(Density, FarQueryClampedToFloor) {
  const DensityModel m(PointSet(1, {0.0}), 0.1);
  const std::vector<double> z = {1e3};
  EXPECT_EQ(m.log_density(z), kLogDensityFloor);
}

TEST(Density, OneDimensionalIntegratesToOne) {
  const DensityModel m(PointSet(1, {-1.0, 0.3, 2.0}), 0.4);
  double integral = 0.0;
  const double step = 1e-3;
  for (double x = -10.0; x <= 10.0; x += step) {
    const std::vector<double> z = {x};
    integral += std::exp(m.log_density(z)) * step;
  }
  EXPECT_NEAR(integral, 1.0, 1e-3);
}

TEST(Density, InvariantToPointOrder) {
  const PointSet p = gaussian_points(30, 3, 1);
  std::vector<std::size_t> idx(30);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), std::mt19937_64(2));
  PointSet shuffled(3);
  for (std::size_t i : idx) shuffled.push_back(p[i]);
  const DensityModel a(p, 0.7), b(shuffled, 0.7);
  const std::vector<double> z = {0.1, 0.2, -0.3};
  EXPECT_NEAR(a.log_density(z), b.log_density(z), 1e-13);
}

TEST(Density, RejectsBadInput) {
  EXPECT_THROW(DensityModel(PointSet(2), 1.0), std::invalid_argument);
  EXPECT_THROW(DensityModel(PointSet(2, {0, 0}), 0.0), std::invalid_argument);
  const DensityModel m(PointSet(2, {0, 0}), 1.0);
  const std::vector<double> z = {0, 0, 0};
  EXPECT_THROW(m.log_density(z), std::invalid_argument);
}

TEST(Bandwidth, DefaultGrid) {
  const auto g = default_bandwidth_grid();
  ASSERT_EQ(g.size(), 20u);
  EXPECT_DOUBLE_EQ(g.front(), std::pow(2.0, -4.5));
  EXPECT_DOUBLE_EQ(g.back(), 32.0);
}

TEST(Bandwidth, SingleCandidateIsChosen) {
  const auto s = select_bandwidth(gaussian_points(20, 2, 3), {0.8});
  EXPECT_EQ(s.bandwidth, 0.8);
}

TEST(Bandwidth, GaussianDataPicksInteriorValue) {
  const auto s = select_bandwidth(gaussian_points(500, 5, 4), default_bandwidth_grid(), 1);
  EXPECT_GT(s.bandwidth, s.grid.front());
  EXPECT_LT(s.bandwidth, s.grid.back());
  EXPECT_GT(s.bandwidth, 0.2);
  EXPECT_LT(s.bandwidth, 2.0);
  const auto best = std::max_element(s.mean_log_likelihood.begin(), s.mean_log_likelihood.end());
  EXPECT_EQ(s.grid[best - s.mean_log_likelihood.begin()], s.bandwidth);
}

TEST(Bandwidth, DeterministicForSeed) {
  const PointSet p = gaussian_points(100, 3, 5);
  const auto a = select_bandwidth(p, default_bandwidth_grid(), 7);
  const auto b = select_bandwidth(p, default_bandwidth_grid(), 7);
  EXPECT_EQ(a.bandwidth, b.bandwidth);
  EXPECT_EQ(a.mean_log_likelihood, b.mean_log_likelihood);
}

TEST(Bandwidth, TooFewPoints) {
  EXPECT_THROW(select_bandwidth(gaussian_points(4, 2, 0), {1.0}), std::invalid_argument);
}

TEST(Subsample, WithoutReplacementPicksDistinctPoints) {
  PointSet p(1);
  for (int i = 0; i < 100; ++i) p.push_back(std::vector<double>{static_cast<double>(i)});
  const PointSet s = subsample(p, 40, 9);
  ASSERT_EQ(s.size(), 40u);
  std::set<double> seen;
  for (std::size_t i = 0; i < s.size(); ++i) seen.insert(s[i][0]);
  EXPECT_EQ(seen.size(), 40u);
  EXPECT_EQ(subsample(p, 40, 9), s);
  const PointSet all = subsample(p, 100, 1);
  std::vector<double> v = all.values();
  std::sort(v.begin(), v.end());
  EXPECT_EQ(v, p.values());
}

TEST(Subsample, OversamplingAddsJitter) {
  const PointSet p(2, {0, 0, 10, 10});
  const PointSet s = subsample(p, 2000, 3);
  ASSERT_EQ(s.size(), 2000u);
  double sum2 = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double base = s[i][0] > 5.0 ? 10.0 : 0.0;
    sum2 += (s[i][0] - base) * (s[i][0] - base);
  }
  EXPECT_NEAR(std::sqrt(sum2 / 2000.0), kJitterStd, 0.01);
}

TEST(DensityIo, RoundTripIsExact) {
  testutil::TempDir dir;
  const DensityModel m(gaussian_points(10, 5, 6), 0.35);
  save_density(m, dir / "d.csv");
  const DensityModel back = load_density(dir / "d.csv");
  EXPECT_EQ(back.points(), m.points());
  EXPECT_EQ(back.bandwidth(), m.bandwidth());
}

TEST(DensityIo, MissingFileNamesProducer) {
  testutil::TempDir dir;
  try {
    load_density(dir / "none.csv");
    FAIL();
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("maad fit-density"), std::string::npos);
  }
}
