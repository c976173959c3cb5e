#include <cmath>
#include <set>

#include "doctest.h"
#include "ldebm/rng.hpp"

using namespace ldebm;

TEST_SUITE("rng") {

TEST_CASE("same seed, same stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(43);
  CHECK(Rng(42).next_u64() != c.next_u64());
}

TEST_CASE("split is a pure function of the key") {
  Rng a(7);
  const Rng s1 = a.split(3);
  a.next_u64();
  a.normal();
  const Rng s2 = a.split(3);
  CHECK(s1.key() == s2.key());
  CHECK(a.split(3).key() != a.split(4).key());
  CHECK(a.split(3).key() != a.key());
}

TEST_CASE("uniform and below ranges") {
  Rng r(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(7) < 7u);
  }
  CHECK(r.below(1) == 0u);
}

TEST_CASE("normal moments") {
  Rng r(11);
  const int n = 200000;
  double s = 0.0, s2 = 0.0, s4 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
    s4 += x * x * x * x;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.01));
  CHECK(s4 / n == doctest::Approx(3.0).epsilon(0.03));
}

TEST_CASE("normal consumes two counter values") {
  Rng r(5);
  r.normal();
  CHECK(r.counter() == 2u);
  const Eigen::MatrixXd m = r.normal_matrix(3, 2);
  CHECK(r.counter() == 14u);
  Rng again(5);
  again.normal();
  for (Eigen::Index j = 0; j < 2; ++j)
    for (Eigen::Index i = 0; i < 3; ++i) CHECK(m(i, j) == again.normal());
}

TEST_CASE("sibling streams are uncorrelated") {
  const Rng root(9);
  Rng a = root.split(0), b = root.split(1);
  const int n = 100000;
  double sab = 0.0;
  for (int i = 0; i < n; ++i) sab += a.normal() * b.normal();
  CHECK(std::abs(sab / n) < 0.015);
  std::set<std::uint64_t> keys;
  for (std::uint64_t i = 0; i < 1000; ++i) keys.insert(root.split(i).key());
  CHECK(keys.size() == 1000u);
}

}
