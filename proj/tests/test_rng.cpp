#include <doctest.h>

#include <set>
#include <vector>

#include "seater/rng.hpp"

using seater::Rng;

TEST_SUITE_BEGIN("rng");

TEST_CASE("same seed gives the same stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds diverge") {
  Rng a(1), b(2);
  int same = 0;
  for (int i = 0; i < 64; ++i)
    if (a.next_u64() == b.next_u64()) ++same;
  CHECK(same == 0);
}

TEST_CASE("next_double stays in [0,1)") {
  Rng r(7);
  for (int i = 0; i < 10000; ++i) {
    const double v = r.next_double();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("below covers the full range without bias artifacts") {
  Rng r(3);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 2000; ++i) seen.insert(r.below(7));
  CHECK(seen.size() == 7);
}

TEST_CASE("shuffle is a permutation") {
  Rng r(11);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  r.shuffle(v);
  std::set<int> s(v.begin(), v.end());
  CHECK(s.size() == 10);
}

TEST_CASE("gaussian has sane moments") {
  Rng r(5);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double g = r.gaussian();
    sum += g;
    sq += g * g;
  }
  CHECK(std::fabs(sum / n) < 0.05);
  CHECK(std::fabs(sq / n - 1.0) < 0.1);
}

TEST_SUITE_END();
