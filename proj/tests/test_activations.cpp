#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "wrsec/activations.hpp"
#include "wrsec/core.hpp"

using namespace wrsec;

namespace {

constexpr Activation kKinds[] = {Activation::kSiLU, Activation::kGeLU};

// Step per order for the extrapolated central-difference oracle.
double oracle_step(int n) {
  constexpr double steps[] = {0.0, 1e-3, 3e-3, 1e-2, 2e-2, 2e-2};
  return steps[n];
}

// Richardson combination of two central differences: O(h^4) truncation.
double fd_extrapolated(Activation kind, int n, double x) {
  const double h = oracle_step(n);
  return (4.0 * fd_oracle(kind, n, x, h / 2) - fd_oracle(kind, n, x, h)) / 3.0;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Univariate form: sigma^(n) as polynomial in s = sigma, via p -> p'(s) (s - s^2).
std::vector<double> univariate_step(const std::vector<double>& p) {
  std::vector<double> out(p.size() + 1, 0.0);
  for (std::size_t k = 1; k < p.size(); ++k) {
    out[k] += k * p[k];
    out[k + 1] -= k * p[k];
  }
  return out;
}

// Expand sum_p c_p u^p (1-u)^(d-p) into powers of u.
std::vector<double> expand(const std::vector<double>& c) {
  const std::size_t d = c.size() - 1;
  std::vector<double> out(d + 1, 0.0);
  for (std::size_t p = 0; p <= d; ++p) {
    double binom = 1.0;
    for (std::size_t k = 0; k <= d - p; ++k) {
      out[p + k] += c[p] * binom * ((k % 2 == 0) ? 1.0 : -1.0);
      binom = binom * static_cast<double>(d - p - k) / static_cast<double>(k + 1);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("activation values at zero") {
  CHECK(act_deriv(Activation::kSiLU, 0, 0.0) == 0.0);
  CHECK(act_deriv(Activation::kSiLU, 1, 0.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(act_deriv(Activation::kGeLU, 1, 0.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(act_deriv(Activation::kGeLU, 2, 0.0) ==
        doctest::Approx(2.0 / std::sqrt(2.0 * std::numbers::pi)).epsilon(1e-15));
}

TEST_CASE("SiLU first derivative closed form") {
  for (double x = -12.0; x <= 12.0; x += 0.37) {
    const double s = sigmoid(x);
    CHECK(act_deriv(Activation::kSiLU, 1, x) == doctest::Approx(s * (1 + x * (1 - s))).epsilon(1e-13));
  }
}

TEST_CASE("unsupported orders") {
  CHECK_THROWS_AS(act_deriv(Activation::kSiLU, kMaxOrder + 1, 0.0), UnsupportedOrder);
  CHECK_THROWS_AS(act_deriv(Activation::kGeLU, -1, 0.0), UnsupportedOrder);
  CHECK_NOTHROW(act_deriv(Activation::kGeLU, kMaxOrder, 0.3));
  CHECK_THROWS(fd_oracle(Activation::kSiLU, 0, 0.0, 1e-3));
  CHECK_THROWS(fd_oracle(Activation::kSiLU, 1, 0.0, 0.0));
}

TEST_CASE("finite-difference oracle spot values") {
  CHECK(std::fabs(fd_oracle(Activation::kSiLU, 1, 0.0, 1e-5) - 0.5) <= 1e-8);
  CHECK(std::fabs(fd_oracle(Activation::kGeLU, 2, 0.0, 1e-4) - 0.7978845608) <= 1e-5);
  const double analytic = act_deriv(Activation::kSiLU, 3, 1.7);
  const double fd = fd_extrapolated(Activation::kSiLU, 3, 1.7);
  CHECK(std::fabs(analytic - fd) <= 1e-6 * (1 + std::fabs(analytic)));
}

TEST_CASE("finite-difference oracle converges with shrinking step until round-off") {
  const double exact = act_deriv(Activation::kSiLU, 5, 3.0);
  double previous = HUGE_VAL;
  for (double h : {0.4, 0.2, 0.1, 0.05, 0.025}) {
    const double err = std::fabs(fd_oracle(Activation::kSiLU, 5, 3.0, h) - exact);
    CHECK(err < previous);
    previous = err;
  }
  CHECK(previous < 1e-4);
  // Far below the optimum step the estimate is dominated by round-off.
  CHECK(std::fabs(fd_oracle(Activation::kSiLU, 5, 3.0, 1e-4) - exact) > previous);
}

TEST_CASE("analytic derivatives match the oracle on the dense grid") {
  for (Activation kind : kKinds) {
    for (int n = 1; n <= 5; ++n) {
      for (int i = 0; i <= 2000; ++i) {
        const double x = -10.0 + 20.0 * i / 2000.0;
        const double a = act_deriv(kind, n, x);
        const double f = fd_extrapolated(kind, n, x);
        REQUIRE_MESSAGE(std::fabs(a - f) <= 1e-5 * (1 + std::fabs(a)),
                        to_string(kind) << " order " << n << " at x=" << x);
      }
    }
  }
}

TEST_CASE("batched derivatives equal single-order calls") {
  std::vector<double> out(kMaxOrder + 1);
  for (Activation kind : kKinds) {
    for (double x : {-7.5, -0.3, 0.0, 2.25, 15.0}) {
      act_derivs(kind, x, out);
      for (int n = 0; n <= kMaxOrder; ++n) CHECK(out[n] == act_deriv(kind, n, x));
    }
  }
}

TEST_CASE("SiLU coefficient tables follow the sigma recurrence") {
  const auto& tab = silu_tables::tables();
  // Bivariate P_n expanded in sigma must equal sigma^(n) from the univariate recurrence.
  std::vector<double> sigma_poly = {0.0, 1.0};
  for (int n = 0; n <= kMaxOrder; ++n) {
    auto expanded = expand(tab[n].p);
    expanded.resize(sigma_poly.size(), 0.0);
    for (std::size_t k = 0; k < sigma_poly.size(); ++k) CHECK(expanded[k] == sigma_poly[k]);
    sigma_poly = univariate_step(sigma_poly);
  }
  // Q_{n+1} = P_n + D[Q_n], P_{n+1} = D[P_n].
  for (int n = 0; n < kMaxOrder; ++n) {
    CHECK(silu_tables::differentiate(tab[n].p) == tab[n + 1].p);
    auto q = silu_tables::differentiate(tab[n].q);
    for (std::size_t k = 0; k < q.size(); ++k) q[k] += tab[n].p[k];
    CHECK(q == tab[n + 1].q);
  }
}

TEST_CASE("ratio examples") {
  for (Activation kind : kKinds) {
    for (int a = 1; a <= 5; ++a) {
      for (double x : {-3.3, 0.7, 4.1}) {
        const auto r = ratio(kind, a, a, x);
        CHECK(r.finite);
        CHECK(r.value == 1.0);
      }
    }
  }
  const auto r = ratio(Activation::kSiLU, 1, 2, 0.0);
  const double fd = fd_extrapolated(Activation::kSiLU, 1, 0.0) / fd_extrapolated(Activation::kSiLU, 2, 0.0);
  CHECK(std::fabs(r.value - fd) <= 1e-6);
  // GeLU''' vanishes at x = 2 exactly: phi(x) (x^3 - 4x).
  const auto pole = ratio(Activation::kGeLU, 1, 3, 2.0);
  CHECK_FALSE(pole.finite);
}

TEST_CASE("ratio times denominator reproduces numerator") {
  for (Activation kind : kKinds) {
    for (int a = 0; a <= 5; ++a) {
      for (int b = 0; b <= 5; ++b) {
        for (int i = 0; i <= 400; ++i) {
          const double x = -10.0 + 20.0 * i / 400.0;
          const auto r = ratio(kind, a, b, x);
          if (!r.finite) continue;
          const double da = act_deriv(kind, a, x);
          const double db = act_deriv(kind, b, x);
          CHECK(std::fabs(r.value * db - da) <= 4 * std::numeric_limits<double>::epsilon() * std::fabs(da));
        }
      }
    }
  }
}

TEST_CASE("derivative evaluation is metered") {
  MeterScope scope;
  act_deriv(Activation::kSiLU, 3, 0.4);
  CHECK(scope.meter().transcendentals() == 1);
  CHECK(scope.meter().madds() > 0);
}
