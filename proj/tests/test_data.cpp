#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "featlab/data.hpp"
#include "featlab/errors.hpp"
#include "featlab/rng.hpp"

using namespace featlab;
namespace fs = std::filesystem;

namespace {

const std::vector<EnvironmentSpec> kTwoEnvs = {{0.25, 0.1, 2500}, {0.25, 0.2, 2500}};

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "featlab_test_data";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Data, Deterministic) {
  const auto a = sample_dataset(kTwoEnvs, 50, 0.01, 9);
  const auto b = sample_dataset(kTwoEnvs, 50, 0.01, 9);
  EXPECT_EQ(a.y, b.y);
  EXPECT_EQ(a.rad_alpha, b.rad_alpha);
  EXPECT_EQ(a.rad_beta, b.rad_beta);
  EXPECT_EQ(a.noise, b.noise);
  const auto c = sample_dataset(kTwoEnvs, 50, 0.01, 10);
  EXPECT_NE(a.noise, c.noise);
}

TEST(Data, CleanSignalWhenNoFlips) {
  const auto ds = sample_dataset({{0.0, 0.0, 4}}, 6, 0.5, 1);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(ds.x1(i, 0), double(ds.y[i]));
    EXPECT_EQ(ds.x1(i, 1), double(ds.y[i]));
    for (std::size_t k = 2; k < ds.d; ++k) EXPECT_EQ(ds.x1(i, k), 0.0);
  }
}

TEST(Data, ShapesOrthogonalityAndCounts) {
  const auto ds = sample_dataset(kTwoEnvs, 50, 0.01, 3);
  ds.check();
  EXPECT_EQ(ds.size(), 5000u);
  EXPECT_EQ(ds.env_size(0), 2500u);
  EXPECT_EQ(ds.env_size(1), 2500u);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ASSERT_EQ(ds.x2(i)[0], 0.0);
    ASSERT_EQ(ds.x2(i)[1], 0.0);
  }
  for (std::size_t e = 0; e < 2; ++e) {
    double s = 0;
    for (std::size_t i = ds.offsets[e]; i < ds.offsets[e + 1]; ++i) s += ds.y[i];
    EXPECT_LE(std::abs(s / 2500.0), 4.0 / std::sqrt(2500.0));
  }
}

TEST(Data, X1IntoMatchesAccessor) {
  const auto ds = sample_dataset(kTwoEnvs, 7, 0.1, 2);
  std::vector<double> buf(7, 99.0);
  ds.x1_into(13, buf.data());
  for (std::size_t k = 0; k < 7; ++k) EXPECT_EQ(buf[k], ds.x1(13, k));
}

TEST(Data, NoiseNormsConcentrate) {
  // holds once d is large against log(n / delta); at d = 50 chi-square tails already cross 3/2
  const double sp = 0.01;
  const std::size_t d = 1000;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto ds = sample_dataset({{0.25, 0.1, 500}, {0.25, 0.2, 500}}, d, sp, seed);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      double n2 = 0;
      for (std::size_t k = 0; k < d; ++k) n2 += ds.x2(i)[k] * ds.x2(i)[k];
      ASSERT_GE(n2, sp * sp * d / 2);
      ASSERT_LE(n2, 3 * sp * sp * d / 2);
    }
  }
}

TEST(Data, ExpectedCountsClosedForm) {
  // (1-a)(2-b1-b2), (1-a)(b1+b2), a(2-b1-b2), a(b1+b2) at (0.25, 0.1, 0.2)
  const auto g = expected_group_counts(0.25, {0.1, 0.2});
  EXPECT_NEAR(g.c_pp, 0.75 * 1.7, 1e-15);
  EXPECT_NEAR(g.c_pm, 0.75 * 0.3, 1e-15);
  EXPECT_NEAR(g.c_mp, 0.25 * 1.7, 1e-15);
  EXPECT_NEAR(g.c_mm, 0.25 * 0.3, 1e-15);
  EXPECT_NEAR(g.c_pp, 1.275, 1e-12);
  EXPECT_NEAR(g.total(), 2.0, 1e-12);
}

TEST(Data, EmpiricalCountsLargeN) {
  const auto ds = sample_dataset({{0.25, 0.1, 100000}, {0.25, 0.2, 100000}}, 3, 0.0, 1);
  const auto g = group_counts(ds);
  EXPECT_NEAR(g.c_pp, 1.275, 0.01);
  EXPECT_NEAR(g.c_pm, 0.225, 0.01);
  EXPECT_NEAR(g.c_mp, 0.425, 0.01);
  EXPECT_NEAR(g.c_mm, 0.075, 0.01);
  EXPECT_NEAR(g.total(), 2.0, 1e-12);
  EXPECT_EQ(g.n_min, 100000u);
}

TEST(Data, CountsDegenerateAndPartition) {
  const auto ds = sample_dataset({{0.0, 0.0, 50}, {0.0, 0.0, 70}}, 3, 0.1, 1);
  const auto g = group_counts(ds);
  EXPECT_EQ(g.c_pp, 2.0);
  EXPECT_EQ(g.c_pm + g.c_mp + g.c_mm, 0.0);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto r = sample_dataset({{0.3, 0.6, 17}, {0.1, 0.9, 23}, {0.5, 0.5, 5}}, 3, 0.1, s);
    EXPECT_NEAR(group_counts(r).total(), 3.0, 1e-12);
  }
}

TEST(Data, CountConcentrationOverSeeds) {
  const double tol = group_count_tolerance(0.05, 2500);
  EXPECT_NEAR(tol, std::sqrt(2.0 * std::log(320.0) / 2500.0), 1e-15);
  const auto ex = expected_group_counts(0.25, {0.1, 0.2});
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto g = group_counts(sample_dataset(kTwoEnvs, 3, 0.0, s));
    EXPECT_LE(std::abs(g.c_pp - ex.c_pp), tol);
    EXPECT_LE(std::abs(g.c_pm - ex.c_pm), tol);
    EXPECT_LE(std::abs(g.c_mp - ex.c_mp), tol);
    EXPECT_LE(std::abs(g.c_mm - ex.c_mm), tol);
  }
}

TEST(Data, TestSetReversesSpuriousSign) {
  const auto ds = sample_test_set(100, {0.0, 0.0}, 5, 0.1, 2);
  EXPECT_EQ(ds.kind, "ood_test");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(ds.x1(i, 1), -double(ds.y[i]));
    EXPECT_EQ(ds.x1(i, 0), double(ds.y[i]));
  }
}

TEST(Data, TestSetScorers) {
  const auto ds = sample_test_set(100000, {0.1, 0.2}, 5, 0.01, 4);
  std::size_t v2_hits = 0, v1_hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    v2_hits += ds.y[i] * ds.x1(i, 1) > 0;
    v1_hits += ds.y[i] * ds.x1(i, 0) > 0;
  }
  EXPECT_EQ(v1_hits, ds.size());
  // spurious sign agrees with y with probability beta_e; average (0.1+0.2)/2
  EXPECT_NEAR(double(v2_hits) / ds.size(), 0.15, 4 * std::sqrt(0.15 * 0.85 / 1e5));
}

TEST(Data, TestSetRequiresEvenSplit) {
  EXPECT_THROW(sample_test_set(101, {0.1, 0.2}, 5, 0.01, 0), InvalidArgument);
}

TEST(Data, Validation) {
  EXPECT_THROW(sample_dataset({{1.5, 0.1, 10}}, 5, 0.01, 0), InvalidArgument);
  EXPECT_THROW(sample_dataset({{0.1, -0.1, 10}}, 5, 0.01, 0), InvalidArgument);
  EXPECT_THROW(sample_dataset({{0.1, 0.1, 0}}, 5, 0.01, 0), InvalidArgument);
  EXPECT_THROW(sample_dataset({{0.1, 0.1, 10}}, 2, 0.01, 0), InvalidArgument);
  EXPECT_THROW(sample_dataset({}, 5, 0.01, 0), InvalidArgument);
}

TEST(Data, SubsetRegroupsByEnvironment) {
  const auto ds = sample_dataset({{0.2, 0.1, 6}, {0.2, 0.3, 4}}, 4, 0.5, 8);
  const auto s = subset(ds, {8, 1, 7, 3});
  s.check();
  EXPECT_EQ(s.env_size(0), 2u);
  EXPECT_EQ(s.env_size(1), 2u);
  EXPECT_EQ(s.y[0], ds.y[1]);
  EXPECT_EQ(s.y[1], ds.y[3]);
  EXPECT_EQ(s.y[2], ds.y[8]);
  EXPECT_EQ(s.x2(3)[2], ds.x2(7)[2]);
}

TEST(Data, CsvRoundTripIsExact) {
  const auto ds = sample_dataset(kTwoEnvs, 6, 0.37, 12);
  const auto csv = scratch("rt.csv"), side = scratch("rt.json");
  write_dataset_csv(ds, csv.string(), "featlab manifest=0123456789abcdef");
  write_dataset_sidecar(ds, side.string(), "featlab manifest=0123456789abcdef");
  const auto back = read_dataset(csv.string(), side.string());
  EXPECT_EQ(back.y, ds.y);
  EXPECT_EQ(back.rad_alpha, ds.rad_alpha);
  EXPECT_EQ(back.rad_beta, ds.rad_beta);
  EXPECT_EQ(back.noise, ds.noise);
  EXPECT_EQ(back.offsets, ds.offsets);
  EXPECT_EQ(back.seed, ds.seed);
}

TEST(Data, MetadataNamesPrng) {
  const auto j = dataset_metadata(sample_dataset(kTwoEnvs, 5, 0.01, 0));
  EXPECT_EQ(j.at("prng"), std::string(kPrngId));
  EXPECT_EQ(j.at("n"), 5000);
}
