#include <sstream>

#include <gtest/gtest.h>

#include "vfs3d/core/binary_io.hpp"
#include "vfs3d/core/error.hpp"
#include "vfs3d/core/hash.hpp"
#include "vfs3d/core/kv.hpp"
#include "vfs3d/core/rng.hpp"

using namespace vfs3d;

TEST(Hash, Fnv1aKnownVectors) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a("foobar"), 0x85944171f73967e8ULL);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a(), b());
}

TEST(Rng, SplitIsIndependentOfParentDraws) {
  Rng a(5), b(5);
  for (int i = 0; i < 10; ++i) (void)a();
  Rng ca = a.split(3), cb = b.split(3);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(ca(), cb());
  EXPECT_NE(Rng(5).split(3)(), Rng(5).split(4)());
}

TEST(Rng, UniformStaysInRange) {
  Rng r(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform(-2, 3);
    ASSERT_GE(u, -2);
    ASSERT_LT(u, 3);
  }
}

TEST(Rng, NormalMomentsRoughlyRight) {
  Rng r(2);
  double s = 0, s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal(1.0, 0.5);
    s += x;
    s2 += x * x;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 1.0, 0.02);
  EXPECT_NEAR(var, 0.25, 0.02);
}

TEST(Rng, BelowCoversRange) {
  Rng r(3);
  std::array<int, 5> seen{};
  for (int i = 0; i < 1000; ++i) ++seen[r.below(5)];
  for (int c : seen) EXPECT_GT(c, 100);
}

TEST(BinaryIo, LittleEndianRoundTrip) {
  std::stringstream ss;
  io::write_le<std::uint32_t>(ss, 0x01020304u);
  io::write_le<double>(ss, -1.25);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 12u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[0]), 0x04);
  EXPECT_EQ(static_cast<unsigned char>(bytes[3]), 0x01);
  EXPECT_EQ(io::read_le<std::uint32_t>(ss), 0x01020304u);
  EXPECT_EQ(io::read_le<double>(ss), -1.25);
}

TEST(BinaryIo, TruncatedReadThrows) {
  std::stringstream ss("ab");
  EXPECT_THROW(io::read_le<std::uint32_t>(ss), IoError);
}

TEST(Require, ThrowsContractViolation) {
  EXPECT_NO_THROW(require(true, "fine"));
  EXPECT_THROW(require(false, "broken"), ContractViolation);
}

TEST(Kv, ParsesSectionsCommentsAndLines) {
  const auto secs = kv::parse("top = 1\n# comment\n[alpha]\n  key = some value  # trailing\n\n[beta]\nx=2\n");
  ASSERT_EQ(secs.size(), 3u);
  EXPECT_EQ(secs[0].name, "");
  EXPECT_EQ(secs[0].entries[0].key, "top");
  EXPECT_EQ(secs[1].name, "alpha");
  EXPECT_EQ(secs[1].entries[0].value, "some value");
  EXPECT_EQ(secs[1].entries[0].line, 4);
  EXPECT_EQ(secs[2].entries[0].key, "x");
}

TEST(Kv, MalformedLinesThrow) {
  EXPECT_THROW(kv::parse("[open\n"), ConfigError);
  EXPECT_THROW(kv::parse("novalue\n"), ConfigError);
  EXPECT_THROW(kv::parse(" = 3\n"), ConfigError);
}

TEST(Kv, FormatDoubleRoundTripsExactly) {
  for (double v : {0.1, 8e-4, 1.0 / 3.0, -75.2, 1e-300, 0.40789654}) {
    EXPECT_EQ(kv::parse_double(kv::format_double(v), "v"), v);
  }
  EXPECT_EQ(kv::format_double(2.0), "2");
}

TEST(Kv, ScalarParsers) {
  EXPECT_EQ(kv::parse_int("-12", "n"), -12);
  EXPECT_THROW(kv::parse_int("1.5", "n"), ConfigError);
  EXPECT_THROW(kv::parse_double("abc", "d"), ConfigError);
  EXPECT_TRUE(kv::parse_bool("on", "b"));
  EXPECT_FALSE(kv::parse_bool("0", "b"));
  EXPECT_THROW(kv::parse_bool("maybe", "b"), ConfigError);
}

TEST(Kv, Lists) {
  const auto parts = kv::split_list("a, b ,c");
  ASSERT_EQ(parts.size(), 3u);
  EXPECT_EQ(parts[1], "b");
  const auto d = kv::parse_doubles("1, -2.5, 3e2", "xs");
  EXPECT_EQ(d, (std::vector<double>{1, -2.5, 300}));
  EXPECT_EQ(kv::join_doubles(d), "1, -2.5, 300");
}
