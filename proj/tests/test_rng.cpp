#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <set>

#include "featlab/rng.hpp"

using namespace featlab;

namespace {

// Straight transcription of the public-domain reference generators, kept
// separate from the library so the two can disagree.
struct RefXoshiro {
  std::uint64_t s[4];
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t next() {
    const std::uint64_t result = rotl(s[1] * 5, 7) * 9;
    const std::uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    return result;
  }
};

std::uint64_t ref_splitmix(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

TEST(Rng, SplitmixKnownVector) {
  std::uint64_t st = 0;
  EXPECT_EQ(splitmix64(st), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(splitmix64(st), 0x6e789e6aa1b965f4ULL);
  EXPECT_EQ(splitmix64(st), 0x06c45d188009454fULL);
}

TEST(Rng, ReferenceXoshiroKnownVector) {
  RefXoshiro r{{1, 2, 3, 4}};
  EXPECT_EQ(r.next(), 11520ULL);
  EXPECT_EQ(r.next(), 0ULL);
  EXPECT_EQ(r.next(), 1509978240ULL);
  EXPECT_EQ(r.next(), 1215971899390074240ULL);
}

TEST(Rng, MatchesReferenceStream) {
  for (std::uint64_t seed : {0ULL, 1ULL, 42ULL, 0xdeadbeefULL}) {
    std::uint64_t st = seed;
    RefXoshiro ref{};
    for (auto& s : ref.s) s = ref_splitmix(st);
    Rng rng(seed);
    for (int k = 0; k < 1000; ++k) ASSERT_EQ(rng.next_u64(), ref.next()) << "seed " << seed << " draw " << k;
  }
}

TEST(Rng, UniformUsesTop53Bits) {
  Rng a(7), b(7);
  for (int k = 0; k < 100; ++k) {
    const double u = a.uniform();
    EXPECT_EQ(u, double(b.next_u64() >> 11) / 9007199254740992.0);
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(Rng, DerivedStreamsDiffer) {
  std::set<std::uint64_t> seen;
  for (const char* tag : {"train/env/0", "train/env/1", "cnn/init", "feat/featurizer", "ood_test/env/0"})
    seen.insert(derive_seed(3, tag));
  EXPECT_EQ(seen.size(), 5u);
  EXPECT_NE(derive_seed(3, "cnn/init"), derive_seed(4, "cnn/init"));
  EXPECT_EQ(derive_seed(3, "cnn/init"), derive_seed(3, "cnn/init"));
}

TEST(Rng, NormalMoments) {
  Rng rng(11);
  const int n = 200000;
  double s = 0, s2 = 0, s4 = 0;
  for (int k = 0; k < n; ++k) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
    s4 += z * z * z * z;
  }
  // 5-sigma bands for the sample mean, variance and fourth moment
  EXPECT_NEAR(s / n, 0.0, 5.0 / std::sqrt(n));
  EXPECT_NEAR(s2 / n, 1.0, 5.0 * std::sqrt(2.0 / n));
  EXPECT_NEAR(s4 / n, 3.0, 5.0 * std::sqrt(96.0 / n));
}

TEST(Rng, RademacherRate) {
  Rng rng(5);
  const int n = 100000;
  int neg = 0;
  for (int k = 0; k < n; ++k) neg += rng.rademacher(0.3) == -1;
  EXPECT_NEAR(double(neg) / n, 0.3, 5.0 * std::sqrt(0.21 / n));
  Rng r0(6);
  for (int k = 0; k < 1000; ++k) {
    EXPECT_EQ(r0.rademacher(0.0), 1);
    EXPECT_EQ(r0.rademacher(1.0), -1);
  }
}
