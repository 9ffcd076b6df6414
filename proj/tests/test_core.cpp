#include <doctest.h>

#include "embsurg/core.hpp"
#include "embsurg/rng.hpp"

#include <cmath>
#include <set>

using namespace embsurg;

TEST_CASE("derived seeds are stable and label-sensitive") {
  CHECK(derive_seed(0, "a") == derive_seed(0, "a"));
  CHECK(derive_seed(0, "a") != derive_seed(0, "b"));
  CHECK(derive_seed(0, "a") != derive_seed(1, "a"));
  CHECK(derive_seed(0, "a", 0) != derive_seed(0, "a", 1));
}

TEST_CASE("rng streams reproduce exactly") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("uniform01 lies in [0,1) and has sane mean") {
  Rng rng(7);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = rng.uniform01();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(std::fabs(sum / 20000 - 0.5) < 0.01);
}

TEST_CASE("normal draws have unit variance") {
  Rng rng(3);
  double sum = 0.0, sq = 0.0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    const double g = rng.normal();
    sum += g;
    sq += g * g;
  }
  const double mean = sum / n;
  CHECK(std::fabs(mean) < 0.02);
  CHECK(std::fabs(sq / n - mean * mean - 1.0) < 0.03);
}

TEST_CASE("in_ball draws stay inside the radius") {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const VecD u = rng.in_ball<double>(16, 0.1);
    CHECK(u.norm() <= 0.1 + 1e-12);
  }
}

TEST_CASE("sample_without_replacement yields distinct indices") {
  Rng rng(5);
  const auto idx = rng.sample_without_replacement(100, 30);
  REQUIRE(idx.size() == 30);
  std::set<std::size_t> seen(idx.begin(), idx.end());
  CHECK(seen.size() == 30);
  for (auto i : idx) CHECK(i < 100);
}

TEST_CASE("below is bounded and covers the range") {
  Rng rng(9);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 500; ++i) {
    const auto v = rng.below(7);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("checksum is order- and content-sensitive") {
  MatF a = MatF::Zero(3, 3), b = MatF::Zero(3, 3);
  CHECK(checksum(a) == checksum(b));
  b(1, 1) = 1.0f;
  CHECK(checksum(a) != checksum(b));
}
