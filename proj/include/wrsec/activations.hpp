#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wrsec {

/// GeLU is the exact form x * Phi(x) with Phi the standard normal CDF.
enum class Activation { kSiLU, kGeLU };

std::string to_string(Activation a);
Activation parse_activation(const std::string& s);

/// Highest derivative order supported by act_deriv.
inline constexpr int kMaxOrder = 12;

struct UnsupportedOrder : std::out_of_range {
  using std::out_of_range::out_of_range;
};

/// n-th derivative of the activation at x (n == 0 is the activation itself).
double act_deriv(Activation kind, int n, double x);

/// Fills out[k] with the k-th derivative at x for k = 0 .. out.size()-1.
/// Shares one exp/erfc evaluation across all orders.
void act_derivs(Activation kind, double x, std::span<double> out);

/// n-th derivative estimate by the n-th central difference of the activation,
/// evaluated in extended precision:
///   h^-n * sum_k (-1)^k C(n,k) f(x + (n/2 - k) h)
/// Truncation error is O(h^2); round-off grows like eps * |f| / h^n.
double fd_oracle(Activation kind, int n, double x, double h);

struct RatioValue {
  double value;
  bool finite;
  double denominator;  // Act^(b)(x); exactly zero at a derivative zero
};

/// f_{a,b}(x) = Act^(a)(x) / Act^(b)(x). Non-finite results are data, not errors.
RatioValue ratio(Activation kind, int a, int b, double x);

namespace silu_tables {

// d^n/dx^n [x * sigma(x)] = x * P_n(u, v) + Q_n(u, v) with u = sigma(x),
// v = 1 - sigma(x). P_n is homogeneous of degree n + 1 and Q_n of degree n;
// entry p of a degree-d table is the coefficient of u^p v^(d-p).
struct Entry {
  std::vector<double> p;
  std::vector<double> q;
};

const std::vector<Entry>& tables();

/// d/dx applied to a homogeneous table, using du/dx = dv/dx * -1 = u v.
std::vector<double> differentiate(const std::vector<double>& coeffs);

}  // namespace silu_tables

}  // namespace wrsec
