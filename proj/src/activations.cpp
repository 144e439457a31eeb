#include "wrsec/activations.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include "wrsec/core.hpp"

namespace wrsec {

std::string to_string(Activation a) { return a == Activation::kSiLU ? "silu" : "gelu"; }

Activation parse_activation(const std::string& s) {
  if (s == "silu") return Activation::kSiLU;
  if (s == "gelu") return Activation::kGeLU;
  throw std::invalid_argument("unknown activation '" + s + "' (expected silu or gelu)");
}

namespace silu_tables {

std::vector<double> differentiate(const std::vector<double>& coeffs) {
  const std::size_t degree = coeffs.size() - 1;
  std::vector<double> out(degree + 2, 0.0);
  for (std::size_t p = 0; p <= degree; ++p) {
    const double c = coeffs[p];
    // c u^p v^(d-p) -> c p u^p v^(d-p+1) - c (d-p) u^(p+1) v^(d-p)
    out[p] += c * static_cast<double>(p);
    out[p + 1] -= c * static_cast<double>(degree - p);
  }
  return out;
}

namespace {

std::vector<Entry> build() {
  std::vector<Entry> t(kMaxOrder + 1);
  t[0].p = {0.0, 1.0};  // u
  t[0].q = {0.0};
  for (int n = 0; n < kMaxOrder; ++n) {
    t[n + 1].p = differentiate(t[n].p);
    std::vector<double> dq = differentiate(t[n].q);
    for (std::size_t k = 0; k < dq.size(); ++k) dq[k] += t[n].p[k];
    t[n + 1].q = std::move(dq);
  }
  return t;
}

}  // namespace

const std::vector<Entry>& tables() {
  static const std::vector<Entry> t = build();
  return t;
}

}  // namespace silu_tables

namespace {

void check_order(int n) {
  if (n < 0 || n > kMaxOrder) {
    throw UnsupportedOrder("derivative order " + std::to_string(n) + " outside [0, " +
                           std::to_string(kMaxOrder) + "]");
  }
}

double eval_homogeneous(const std::vector<double>& c, const double* upow, const double* vpow) {
  const std::size_t d = c.size() - 1;
  double acc = 0.0;
  for (std::size_t p = 0; p <= d; ++p) {
    if (c[p] != 0.0) acc += c[p] * upow[p] * vpow[d - p];
  }
  return acc;
}

void silu_derivs(double x, std::span<double> out) {
  const double t = std::exp(-std::fabs(x));
  const double u = x >= 0.0 ? 1.0 / (1.0 + t) : t / (1.0 + t);
  const double v = x >= 0.0 ? t / (1.0 + t) : 1.0 / (1.0 + t);
  std::array<double, kMaxOrder + 2> upow{}, vpow{};
  upow[0] = vpow[0] = 1.0;
  const std::size_t top_degree = out.size();  // P_n has degree n + 1
  for (std::size_t k = 1; k <= top_degree; ++k) {
    upow[k] = upow[k - 1] * u;
    vpow[k] = vpow[k - 1] * v;
  }
  const auto& tab = silu_tables::tables();
  std::uint64_t terms = 0;
  for (std::size_t n = 0; n < out.size(); ++n) {
    out[n] = x * eval_homogeneous(tab[n].p, upow.data(), vpow.data()) +
             eval_homogeneous(tab[n].q, upow.data(), vpow.data());
    terms += tab[n].p.size() + tab[n].q.size();
  }
  cost::transcendentals(1);
  cost::madds(terms + 2 * top_degree);
}

void gelu_derivs(double x, std::span<double> out) {
  constexpr double kInvSqrt2Pi = 0.3989422804014326779399460599343819;
  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  const double cdf = 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0);
  // probabilists' Hermite: He_{k+1} = x He_k - k He_{k-1}
  std::array<double, kMaxOrder + 1> he{};
  he[0] = 1.0;
  he[1] = x;
  for (std::size_t k = 1; k + 1 < out.size(); ++k) {
    he[k + 1] = x * he[k] - static_cast<double>(k) * he[k - 1];
  }
  for (std::size_t n = 0; n < out.size(); ++n) {
    if (n == 0) {
      out[n] = x * cdf;
    } else if (n == 1) {
      out[n] = cdf + x * pdf;
    } else {
      // d^n/dx^n [x Phi(x)] = (-1)^n phi(x) (He_{n-2}(x) - He_n(x))
      const double sign = (n % 2 == 0) ? 1.0 : -1.0;
      out[n] = sign * pdf * (he[n - 2] - he[n]);
    }
  }
  cost::transcendentals(2);
  cost::madds(3 * out.size());
}

}  // namespace

void act_derivs(Activation kind, double x, std::span<double> out) {
  if (out.empty()) return;
  check_order(static_cast<int>(out.size()) - 1);
  if (kind == Activation::kSiLU) {
    silu_derivs(x, out);
  } else {
    gelu_derivs(x, out);
  }
}

double act_deriv(Activation kind, int n, double x) {
  check_order(n);
  std::array<double, kMaxOrder + 1> buf{};
  act_derivs(kind, x, std::span<double>(buf.data(), static_cast<std::size_t>(n) + 1));
  return buf[static_cast<std::size_t>(n)];
}

double fd_oracle(Activation kind, int n, double x, double h) {
  if (n < 1) throw std::invalid_argument("fd_oracle: order must be >= 1");
  if (!(h > 0.0)) throw std::invalid_argument("fd_oracle: step must be positive");
  auto f = [kind](long double t) -> long double {
    if (kind == Activation::kSiLU) return t / (1.0L + std::exp(-t));
    return t * 0.5L * std::erfc(-t / std::sqrt(2.0L));
  };
  const long double hl = h;
  long double acc = 0.0L;
  long double binom = 1.0L;
  for (int k = 0; k <= n; ++k) {
    const long double offset = (static_cast<long double>(n) / 2.0L - k) * hl;
    acc += ((k % 2 == 0) ? binom : -binom) * f(static_cast<long double>(x) + offset);
    binom = binom * (n - k) / (k + 1);
  }
  return static_cast<double>(acc / std::pow(hl, n));
}

RatioValue ratio(Activation kind, int a, int b, double x) {
  check_order(a);
  check_order(b);
  std::array<double, kMaxOrder + 1> buf{};
  const int top = a > b ? a : b;
  act_derivs(kind, x, std::span<double>(buf.data(), static_cast<std::size_t>(top) + 1));
  const double value = buf[static_cast<std::size_t>(a)] / buf[static_cast<std::size_t>(b)];
  return {value, std::isfinite(value), buf[static_cast<std::size_t>(b)]};
}

}  // namespace wrsec
