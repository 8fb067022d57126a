#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <vector>

#include "lhdnn/nsnum.hpp"

using namespace lhdnn;

namespace {

NsNumber mono(double c, int k) { return NsNumber::monosemium(c, k); }

// Independent oracle: plain lexicographic comparison of real tuples.
Ordering lex_tuple_compare(const std::vector<double>& a, const std::vector<double>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < b[i]) return Ordering::kLess;
    if (a[i] > b[i]) return Ordering::kGreater;
  }
  return Ordering::kEqual;
}

// Random values with small integer coefficients so that sums and products
// stay exact in double precision.
NsNumber random_exact(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> nterms(0, 3), expo(-3, 3), coef(-4, 4);
  NsNumber v(0.0);
  for (int i = nterms(rng); i > 0; --i) {
    int c = coef(rng);
    if (c != 0) v = v + mono(c, expo(rng));
  }
  return v;
}

}  // namespace

TEST_CASE("addition merges terms by exponent") {
  CHECK(NsNumber::alpha() + NsNumber::alpha() == mono(2, 1));
  // real part cancels
  CHECK((NsNumber(3) + mono(2, -1)) + NsNumber(-3) == mono(2, -1));
  // (a - 3) + (2a^2 - 2a + 3) = 2a^2 - a
  NsNumber lhs = (mono(1, 1) + NsNumber(-3)) + (mono(2, 2) + mono(-2, 1) + NsNumber(3));
  CHECK(lhs == mono(2, 2) + mono(-1, 1));
}

TEST_CASE("multiplication is the Cauchy product of monosemia") {
  // a * (2a - 3) = 2a^2 - 3a
  CHECK(NsNumber::alpha() * (mono(2, 1) + NsNumber(-3)) == mono(2, 2) + mono(-3, 1));
  // e * a = 1
  CHECK(NsNumber::eta() * NsNumber::alpha() == NsNumber(1));
  // (1.3 + 0.4e^3) * (6.2a^3 - 5.2) = 8.06a^3 - 4.28 - 2.08e^3
  NsNumber p = (NsNumber(1.3) + mono(0.4, -3)) * (mono(6.2, 3) + NsNumber(-5.2));
  REQUIRE(p.terms().size() == 3);
  CHECK(p.coeff_of(3) == Catch::Approx(8.06).epsilon(1e-12));
  CHECK(p.coeff_of(0) == Catch::Approx(-4.28).epsilon(1e-12));
  CHECK(p.coeff_of(-3) == Catch::Approx(-2.08).epsilon(1e-12));
}

TEST_CASE("division by a monosemium is exact") {
  NsNumber a = mono(2, 2) + mono(-3, 1);
  CHECK(a / NsNumber::alpha() == mono(2, 1) + NsNumber(-3));
  CHECK(mono(4, 3) / mono(2, 1) == mono(2, 2));
  CHECK_THROWS_AS(a / NsNumber(), std::domain_error);
}

TEST_CASE("long division recovers the factors of the worked product") {
  NsNumber q = NsNumber(1.3) + mono(0.4, -3);
  NsNumber d = mono(6.2, 3) + NsNumber(-5.2);
  NsNumber back = (q * d) / d;
  CHECK(back.coeff_of(0) == Catch::Approx(1.3).epsilon(1e-12));
  CHECK(back.coeff_of(-3) == Catch::Approx(0.4).epsilon(1e-12));
  // rounding may leave dust on other exponents; no epsilon pruning by design
  for (const NsTerm& t : back.terms())
    if (t.exponent != 0 && t.exponent != -3) CHECK(std::abs(t.coeff) < 1e-12);
}

TEST_CASE("division of series truncates to max_terms quotient terms") {
  // 1 / (1 + e) = 1 - e + e^2 - ...
  NsNumber q = NsNumber(1) / (NsNumber(1) + NsNumber::eta());
  CHECK(static_cast<int>(q.terms().size()) == NsNumber::kDefaultMaxTerms);
  CHECK(q.coeff_of(0) == 1.0);
  CHECK(q.coeff_of(-1) == -1.0);
  CHECK(q.coeff_of(-5) == -1.0);
  CHECK(q.coeff_of(-6) == 1.0);
}

TEST_CASE("comparison follows the leading coefficient of the difference") {
  CHECK(compare(NsNumber::eta(), NsNumber(1)) == Ordering::kLess);
  CHECK(compare(NsNumber::alpha(), NsNumber::alpha() + NsNumber(1)) == Ordering::kLess);
  NsNumber v = NsNumber(3) + mono(2, -1);
  CHECK(compare(v, v) == Ordering::kEqual);
  // 0 < e < 1 < a
  CHECK(NsNumber() < NsNumber::eta());
  CHECK(NsNumber::eta() < NsNumber(1));
  CHECK(NsNumber(1) < NsNumber::alpha());
}

TEST_CASE("classification by leading exponent") {
  CHECK(classify(mono(1, -3)) == NsClass::kInfinitesimal);
  CHECK(classify(NsNumber(3) + mono(2, -1)) == NsClass::kFinite);
  CHECK(classify(mono(-1.0 / 3.0, 1) + mono(1, -2)) == NsClass::kInfinite);
  CHECK(classify(NsNumber()) == NsClass::kZero);
}

TEST_CASE("lex_scalarize lays losses out on exponents 0,-1,...") {
  std::vector<double> one{2.0};
  CHECK(lex_scalarize(one) == NsNumber(2.0));

  std::vector<double> three{1.0, 3.0, 0.5};
  NsNumber v = lex_scalarize(three);
  CHECK(v == NsNumber(1) + mono(3, -1) + mono(0.5, -2));

  std::vector<double> a{1, 9}, b{2, 0};
  CHECK(lex_scalarize(a) < lex_scalarize(b));
}

TEST_CASE("classify of scalarized tuples") {
  std::vector<double> lead{0.7, 0.0, 3.0};
  CHECK(classify(lex_scalarize(lead)) == NsClass::kFinite);
  std::vector<double> rest{0.0, 0.0, 3.0};
  CHECK(classify(lex_scalarize(rest)) == NsClass::kInfinitesimal);
}

TEST_CASE("scalarization order equals lexicographic tuple order") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> len(2, 5), val(0, 3);
  for (int trial = 0; trial < 20000; ++trial) {
    int n = len(rng);
    std::vector<double> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a[i] = val(rng) * 0.5;
      b[i] = val(rng) * 0.5;
    }
    REQUIRE(compare(lex_scalarize(a), lex_scalarize(b)) == lex_tuple_compare(a, b));
  }
}

TEST_CASE("field axioms hold exactly on values that fit the term budget") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 4000; ++trial) {
    NsNumber x = random_exact(rng), y = random_exact(rng), z = random_exact(rng);
    CHECK(x + y == y + x);
    CHECK((x + y) + z == x + (y + z));
    CHECK(x * y == y * x);
    CHECK((x * y) * z == x * (y * z));
    CHECK(x * (y + z) == x * y + x * z);
    CHECK(x + NsNumber() == x);
    CHECK(x * NsNumber(1) == x);
    CHECK((x + (-x)).is_zero());
    if (!x.is_zero()) {
      // multiplicative inverse of the leading monosemium (power-of-two
      // coefficient so the reciprocal is exact)
      NsNumber m = mono(2, x.leading_exponent());
      CHECK(m * (NsNumber(1) / m) == NsNumber(1));
    }
  }
}

TEST_CASE("total order is antisymmetric and transitive on random values") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 2000; ++trial) {
    NsNumber x = random_exact(rng), y = random_exact(rng), z = random_exact(rng);
    Ordering xy = compare(x, y), yx = compare(y, x);
    if (xy == Ordering::kLess) CHECK(yx == Ordering::kGreater);
    if (xy == Ordering::kEqual) CHECK(yx == Ordering::kEqual);
    if (xy == Ordering::kLess && compare(y, z) == Ordering::kLess)
      CHECK(compare(x, z) == Ordering::kLess);
  }
}

TEST_CASE("truncation drops the lowest exponents") {
  NsNumber v(0.0, 4);
  for (int k = 5; k >= 0; --k) v = v + NsNumber::monosemium(1.0, k, 4);
  REQUIRE(v.terms().size() == 4);
  CHECK(v.leading_exponent() == 5);
  CHECK(v.terms().back().exponent == 2);
}

TEST_CASE("text rendering") {
  CHECK(to_string(NsNumber()) == "0");
  CHECK(to_string(NsNumber(3) + mono(2, -1)) == "3 + 2*e");
  CHECK(to_string(mono(2, 2) + mono(-3, 1)) == "2*a^2 - 3*a");
  CHECK(to_string(mono(-1, 1) + mono(0.5, -2)) == "-1*a + 0.5*e^2");
}
