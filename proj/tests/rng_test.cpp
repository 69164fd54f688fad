#include <gtest/gtest.h>

#include <cmath>

#include "prmcs/rng.hpp"

using prmcs::RngStream;

// Reference values come from a separate Python implementation of splitmix64.
TEST(RngStream, FirstWordForSeedSeven) {
  RngStream rng(7);
  EXPECT_EQ(rng.next_u64(), 0x63cbe1e459320dd7ULL);
}

TEST(RngStream, UnitDrawsForSeedSeven) {
  const double expected[] = {0.38983, 0.016788, 0.900761, 0.58293, 0.452442,
                             0.249432, 0.467953, 0.328077, 0.134258, 0.413141};
  RngStream rng(7);
  for (double e : expected) EXPECT_NEAR(rng.unit(), e, 5e-7);
}

TEST(RngStream, UnitDrawsForSeedFortyTwo) {
  RngStream rng(42);
  EXPECT_DOUBLE_EQ(rng.unit(), 0.7415648787718233);
  EXPECT_DOUBLE_EQ(rng.unit(), 0.1599103928769201);
  EXPECT_DOUBLE_EQ(rng.unit(), 0.27860113025513866);
}

TEST(RngStream, SameSeedSameStream) {
  RngStream a(123), b(123);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(RngStream, UnitStaysInHalfOpenInterval) {
  RngStream rng(9);
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.unit();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(RngStream, BelowCoversRange) {
  RngStream rng(3);
  int hits[5] = {};
  for (int i = 0; i < 5000; ++i) {
    const auto v = rng.below(5);
    ASSERT_LT(v, 5u);
    ++hits[v];
  }
  for (int h : hits) EXPECT_GT(h, 800);
}

TEST(RngStream, GaussianMoments) {
  RngStream rng(11);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = rng.gaussian();
    sum += g;
    sq += g * g;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(RngStream, ForkConsumesOneDraw) {
  RngStream a(5), b(5);
  RngStream child = a.fork();
  EXPECT_EQ(child.state(), b.next_u64());
  EXPECT_EQ(a.state(), b.state());
}
