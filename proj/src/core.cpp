#include "wrsec/core.hpp"

#include <algorithm>
#include <cmath>

namespace wrsec {

namespace {
thread_local MeterScope* g_current_scope = nullptr;
}

MeterScope::MeterScope() : parent_(g_current_scope) { g_current_scope = this; }

MeterScope::~MeterScope() {
  g_current_scope = parent_;
  if (parent_ != nullptr) parent_->meter_.merge(meter_);
}

CostMeter* MeterScope::current() noexcept {
  return g_current_scope != nullptr ? &g_current_scope->meter_ : nullptr;
}

namespace cost {

void madds(std::uint64_t n) noexcept {
  if (CostMeter* m = MeterScope::current()) m->add_madds(n);
}

void transcendentals(std::uint64_t n) noexcept {
  if (CostMeter* m = MeterScope::current()) m->add_transcendentals(n);
}

void merge(const CostMeter& other) noexcept {
  if (CostMeter* m = MeterScope::current()) m->merge(other);
}

}  // namespace cost

std::uint16_t to_half_bits(double x) noexcept {
  const std::uint16_t sign = std::signbit(x) ? 0x8000 : 0x0000;
  if (std::isnan(x)) return sign | 0x7E00;
  const double a = std::fabs(x);
  // 65520 is the midpoint between the largest half (65504) and 2^16; ties go
  // to the even significand, which is infinity.
  if (a >= 65520.0) return sign | 0x7C00;
  if (a == 0.0) return sign;

  int e = 0;
  std::frexp(a, &e);
  int exponent = std::max(e - 1, -14);
  const double quantum = std::ldexp(1.0, exponent - 10);
  double significand = std::nearbyint(a / quantum);  // a / quantum is exact
  if (significand >= 2048.0) {
    significand = 1024.0;
    exponent += 1;
  }
  const auto m = static_cast<std::uint16_t>(significand);
  if (exponent == -14 && m < 1024) return sign | m;
  return sign | static_cast<std::uint16_t>((exponent + 15) << 10) |
         static_cast<std::uint16_t>(m - 1024);
}

double from_half_bits(std::uint16_t h) noexcept {
  const int exponent = (h >> 10) & 0x1F;
  const int mantissa = h & 0x3FF;
  double v;
  if (exponent == 0) {
    v = std::ldexp(static_cast<double>(mantissa), -24);
  } else if (exponent == 31) {
    v = mantissa == 0 ? HUGE_VAL : std::nan("");
  } else {
    v = std::ldexp(static_cast<double>(1024 + mantissa), exponent - 25);
  }
  return (h & 0x8000) ? -v : v;
}

std::string to_string(Precision p) {
  switch (p) {
    case Precision::kF64: return "f64";
    case Precision::kF32: return "f32";
    case Precision::kF16: return "f16";
  }
  return "?";
}

Precision parse_precision(const std::string& s) {
  if (s == "f64") return Precision::kF64;
  if (s == "f32") return Precision::kF32;
  if (s == "f16") return Precision::kF16;
  throw std::invalid_argument("unknown precision '" + s + "' (expected f64, f32 or f16)");
}

}  // namespace wrsec
