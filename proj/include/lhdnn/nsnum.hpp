#pragma once

// Truncated series arithmetic over the infinite unit `a` and its reciprocal
// `e` (rendered that way in text output).  A value is a finite, ordered sum
// of monosemia c*a^k with integer exponents k, leading (largest) exponent
// first.  The ordering of two values is decided by the leading coefficient
// of their difference, which makes comparison a lexicographic test on the
// exponent-aligned coefficient tuples.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lhdnn {

enum class NsClass { kZero, kInfinitesimal, kFinite, kInfinite };
enum class Ordering { kLess, kEqual, kGreater };

struct NsTerm {
  int exponent = 0;
  double coeff = 0.0;
  bool operator==(const NsTerm&) const = default;
};

class NsNumber {
 public:
  static constexpr int kDefaultMaxTerms = 16;

  NsNumber() = default;  // zero
  NsNumber(double real, int max_terms = kDefaultMaxTerms) : max_terms_(max_terms) {
    if (real != 0.0) terms_.push_back({0, real});
  }

  static NsNumber monosemium(double coeff, int exponent,
                             int max_terms = kDefaultMaxTerms) {
    NsNumber v(0.0, max_terms);
    if (coeff != 0.0) v.terms_.push_back({exponent, coeff});
    return v;
  }
  static NsNumber alpha() { return monosemium(1.0, 1); }
  static NsNumber eta() { return monosemium(1.0, -1); }

  // Terms sorted by strictly decreasing exponent, no zero coefficients.
  const std::vector<NsTerm>& terms() const { return terms_; }
  int max_terms() const { return max_terms_; }
  bool is_zero() const { return terms_.empty(); }
  int leading_exponent() const { return terms_.empty() ? 0 : terms_.front().exponent; }
  double leading_coeff() const { return terms_.empty() ? 0.0 : terms_.front().coeff; }

  double coeff_of(int exponent) const {
    for (const NsTerm& t : terms_) {
      if (t.exponent == exponent) return t.coeff;
      if (t.exponent < exponent) break;
    }
    return 0.0;
  }
  // Coefficient of a^0.
  double standard_part() const { return coeff_of(0); }

  friend NsNumber operator-(const NsNumber& v) {
    NsNumber r = v;
    for (NsTerm& t : r.terms_) t.coeff = -t.coeff;
    return r;
  }

  friend NsNumber operator+(const NsNumber& x, const NsNumber& y) {
    std::map<int, double, std::greater<>> acc;
    for (const NsTerm& t : x.terms_) acc[t.exponent] += t.coeff;
    for (const NsTerm& t : y.terms_) acc[t.exponent] += t.coeff;
    return from_map(acc, std::max(x.max_terms_, y.max_terms_));
  }
  friend NsNumber operator-(const NsNumber& x, const NsNumber& y) { return x + (-y); }

  // Full Cauchy product: exponents add, coefficients multiply.
  friend NsNumber operator*(const NsNumber& x, const NsNumber& y) {
    std::map<int, double, std::greater<>> acc;
    for (const NsTerm& s : x.terms_)
      for (const NsTerm& t : y.terms_) acc[s.exponent + t.exponent] += s.coeff * t.coeff;
    return from_map(acc, std::max(x.max_terms_, y.max_terms_));
  }

  // Long division by the leading monosemium of the divisor, emitting at most
  // max_terms quotient terms.  Exact when the remainder cancels early.
  friend NsNumber operator/(const NsNumber& x, const NsNumber& y) {
    if (y.is_zero()) throw std::domain_error("NsNumber: division by zero");
    const int budget = std::max(x.max_terms_, y.max_terms_);
    NsNumber quotient(0.0, budget);
    NsNumber rem = x;
    rem.max_terms_ = 2 * budget;  // working headroom for the remainder
    while (!rem.is_zero() && static_cast<int>(quotient.terms_.size()) < budget) {
      NsNumber q = monosemium(rem.leading_coeff() / y.leading_coeff(),
                              rem.leading_exponent() - y.leading_exponent(), 2 * budget);
      quotient = quotient + q;
      rem = rem - q * y;
    }
    quotient.max_terms_ = budget;
    quotient.truncate();
    return quotient;
  }

  bool operator==(const NsNumber& o) const { return terms_ == o.terms_; }

 private:
  static NsNumber from_map(const std::map<int, double, std::greater<>>& acc,
                           int max_terms) {
    NsNumber v(0.0, max_terms);
    for (const auto& [k, c] : acc)
      if (c != 0.0) v.terms_.push_back({k, c});
    v.truncate();
    return v;
  }
  void truncate() {
    if (static_cast<int>(terms_.size()) > max_terms_) terms_.resize(max_terms_);
  }

  std::vector<NsTerm> terms_;
  int max_terms_ = kDefaultMaxTerms;
};

// Sign of (x - y) read off the leading coefficient of the difference.
inline Ordering compare(const NsNumber& x, const NsNumber& y) {
  const auto &a = x.terms(), &b = y.terms();
  std::size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    int ea = i < a.size() ? a[i].exponent : std::numeric_limits<int>::min();
    int eb = j < b.size() ? b[j].exponent : std::numeric_limits<int>::min();
    double ca = 0.0, cb = 0.0;
    if (ea >= eb) ca = a[i++].coeff;
    if (eb >= ea) cb = b[j++].coeff;
    if (ca != cb) return ca < cb ? Ordering::kLess : Ordering::kGreater;
  }
  return Ordering::kEqual;
}

inline bool operator<(const NsNumber& x, const NsNumber& y) {
  return compare(x, y) == Ordering::kLess;
}

inline NsClass classify(const NsNumber& v) {
  if (v.is_zero()) return NsClass::kZero;
  if (v.leading_exponent() > 0) return NsClass::kInfinite;
  if (v.leading_exponent() == 0) return NsClass::kFinite;
  return NsClass::kInfinitesimal;
}

// Collapses a priority-ordered loss tuple into one value: losses[i] weighted
// by e^i, so comparing two collapsed values reproduces the lexicographic
// comparison of the tuples.
inline NsNumber lex_scalarize(std::span<const double> losses) {
  const int max_terms =
      std::max<int>(NsNumber::kDefaultMaxTerms, static_cast<int>(losses.size()));
  NsNumber v(0.0, max_terms);
  for (std::size_t i = 0; i < losses.size(); ++i)
    v = v + NsNumber::monosemium(losses[i], -static_cast<int>(i), max_terms);
  return v;
}

inline NsNumber lex_scalarize(const std::vector<double>& losses) {
  return lex_scalarize(std::span<const double>(losses));
}

// "c*a^k + ... + c + ... + c*e^k" with `a` the infinite unit, `e` = a^-1.
inline std::string to_string(const NsNumber& v) {
  if (v.is_zero()) return "0";
  std::string out;
  char buf[64];
  for (const NsTerm& t : v.terms()) {
    double c = t.coeff;
    if (out.empty()) {
      if (c < 0) out += "-";
    } else {
      out += c < 0 ? " - " : " + ";
    }
    std::snprintf(buf, sizeof buf, "%g", std::abs(c));
    out += buf;
    if (t.exponent > 0) {
      out += "*a";
      if (t.exponent > 1) out += "^" + std::to_string(t.exponent);
    } else if (t.exponent < 0) {
      out += "*e";
      if (t.exponent < -1) out += "^" + std::to_string(-t.exponent);
    }
  }
  return out;
}

}  // namespace lhdnn
