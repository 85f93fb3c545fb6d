#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "spdelab/rng.hpp"

using namespace spdelab;

// Known-answer vectors of the Random123 distribution (kat_vectors, philox4x32_10).
TEST(Philox, KnownAnswers) {
  EXPECT_EQ(philox4x32_10({0, 0, 0, 0}, {0, 0}),
            (Philox4x32Counter{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(philox4x32_10({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}),
            (Philox4x32Counter{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
  EXPECT_EQ(philox4x32_10({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}),
            (Philox4x32Counter{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(NormalStream, PureFunctionOfCoordinates) {
  NormalStream a(42, 7, 3), b(42, 7, 3);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(a.next(), b.next());
  EXPECT_EQ(a.position(), 1000u);

  // Changing any coordinate changes the stream.
  NormalStream base(42, 7, 3);
  const double first = base.next();
  EXPECT_NE(NormalStream(43, 7, 3).next(), first);
  EXPECT_NE(NormalStream(42, 8, 3).next(), first);
  EXPECT_NE(NormalStream(42, 7, -3).next(), first);
  EXPECT_NE(NormalStream(42, 7, 3, StreamDomain::ScalarOracle).next(), first);
}

TEST(NormalStream, Moments) {
  NormalStream s(1, 0, 0);
  const int n = 400000;
  double m1 = 0, m2 = 0, m3 = 0, m4 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = s.next();
    m1 += z;
    m2 += z * z;
    m3 += z * z * z;
    m4 += z * z * z * z;
  }
  m1 /= n;
  m2 /= n;
  m3 /= n;
  m4 /= n;
  // Five standard errors of each sample moment.
  EXPECT_NEAR(m1, 0.0, 5.0 * std::sqrt(1.0 / n));
  EXPECT_NEAR(m2, 1.0, 5.0 * std::sqrt(2.0 / n));
  EXPECT_NEAR(m3, 0.0, 5.0 * std::sqrt(15.0 / n));
  EXPECT_NEAR(m4, 3.0, 5.0 * std::sqrt(96.0 / n));
}

TEST(NormalStream, ChannelsUncorrelated) {
  const int n = 100000;
  std::vector<NormalStream> s;
  for (int k = -2; k <= 2; ++k) s.emplace_back(9, 4, k);
  std::vector<std::vector<double>> x(s.size(), std::vector<double>(n));
  for (int i = 0; i < n; ++i)
    for (std::size_t c = 0; c < s.size(); ++c) x[c][static_cast<std::size_t>(i)] = s[c].next();
  for (std::size_t a = 0; a < s.size(); ++a)
    for (std::size_t b = a + 1; b < s.size(); ++b) {
      double r = 0.0;
      for (int i = 0; i < n; ++i) r += x[a][static_cast<std::size_t>(i)] * x[b][static_cast<std::size_t>(i)];
      EXPECT_LT(std::abs(r / n), 5.0 / std::sqrt(n));
    }
  // Lag-1 autocorrelation within a stream, including across Box-Muller pairs.
  double r1 = 0.0;
  for (int i = 1; i < n; ++i) r1 += x[0][static_cast<std::size_t>(i)] * x[0][static_cast<std::size_t>(i - 1)];
  EXPECT_LT(std::abs(r1 / n), 5.0 / std::sqrt(n));
}

TEST(SplitMix, Reference) {
  // First output of splitmix64 seeded with 0 (state advanced once).
  EXPECT_EQ(splitmix64(0), 0xe220a8397b1dcdafull);
}
