#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace wrsec {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Vec64 = Vector<double>;
using Mat64 = RowMatrix<double>;
using Index = Eigen::Index;

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when a computation produces (or would produce) a non-finite value.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Deterministic operation counter. Scalar multiply-adds and transcendental
/// evaluations are tracked separately; total() is the cost used by the games.
class CostMeter {
 public:
  void add_madds(std::uint64_t n) noexcept { madds_ += n; }
  void add_transcendentals(std::uint64_t n) noexcept { transcendentals_ += n; }
  void merge(const CostMeter& other) noexcept {
    madds_ += other.madds_;
    transcendentals_ += other.transcendentals_;
  }

  std::uint64_t madds() const noexcept { return madds_; }
  std::uint64_t transcendentals() const noexcept { return transcendentals_; }
  std::uint64_t total() const noexcept { return madds_ + transcendentals_; }

  bool operator==(const CostMeter&) const = default;

 private:
  std::uint64_t madds_ = 0;
  std::uint64_t transcendentals_ = 0;
};

// The innermost active scope on this thread receives every charge made by the
// numeric primitives. When a scope closes its totals are added to the
// enclosing scope, so nested measurements compose (adversary ⊂ game trial).
class MeterScope {
 public:
  MeterScope();
  ~MeterScope();
  MeterScope(const MeterScope&) = delete;
  MeterScope& operator=(const MeterScope&) = delete;

  const CostMeter& meter() const noexcept { return meter_; }

  /// Meter of the innermost scope on the calling thread, or nullptr.
  static CostMeter* current() noexcept;

 private:
  CostMeter meter_;
  MeterScope* parent_;
};

namespace cost {
void madds(std::uint64_t n) noexcept;
void transcendentals(std::uint64_t n) noexcept;
/// Adds a meter collected elsewhere (e.g. on a worker thread) to the current scope.
void merge(const CostMeter& m) noexcept;
}  // namespace cost

template <typename Scalar>
Vector<Scalar> matvec(const RowMatrix<Scalar>& m, const Vector<Scalar>& v) {
  if (m.cols() != v.size()) {
    throw DimensionError("matvec: matrix has " + std::to_string(m.cols()) +
                         " columns, vector has " + std::to_string(v.size()) + " entries");
  }
  // Plain sequential accumulation so results do not depend on Eigen's
  // vectorisation or blocking.
  Vector<Scalar> out(m.rows());
  for (Index i = 0; i < m.rows(); ++i) {
    const Scalar* row = m.data() + i * m.cols();
    Scalar acc = Scalar(0);
    for (Index j = 0; j < m.cols(); ++j) acc += row[j] * v[j];
    out[i] = acc;
  }
  cost::madds(static_cast<std::uint64_t>(m.rows() * m.cols()));
  return out;
}

template <typename Scalar>
Scalar dot(const Scalar* a, const Scalar* b, Index n) {
  Scalar acc = Scalar(0);
  for (Index j = 0; j < n; ++j) acc += a[j] * b[j];
  return acc;
}

template <typename Scalar>
Vector<Scalar> cwise_mul(const Vector<Scalar>& a, const Vector<Scalar>& b) {
  if (a.size() != b.size()) throw DimensionError("cwise_mul: length mismatch");
  cost::madds(static_cast<std::uint64_t>(a.size()));
  return a.cwiseProduct(b);
}

/// Elementwise a^n by repeated multiplication; n == 0 gives all ones.
template <typename Scalar>
Vector<Scalar> cwise_pow(const Vector<Scalar>& a, int n) {
  if (n < 0) throw std::invalid_argument("cwise_pow: negative exponent");
  Vector<Scalar> out = Vector<Scalar>::Ones(a.size());
  for (int k = 0; k < n; ++k) out.array() *= a.array();
  cost::madds(static_cast<std::uint64_t>(a.size()) * static_cast<std::uint64_t>(n));
  return out;
}

enum class NonFinite { kReject, kAllow };

template <typename Scalar>
Vector<Scalar> cwise_reciprocal(const Vector<Scalar>& a, NonFinite policy = NonFinite::kReject) {
  Vector<Scalar> out(a.size());
  for (Index j = 0; j < a.size(); ++j) {
    if (a[j] == Scalar(0) && policy == NonFinite::kReject) {
      throw NumericError("cwise_reciprocal: division by zero at index " + std::to_string(j));
    }
    out[j] = Scalar(1) / a[j];
  }
  cost::madds(static_cast<std::uint64_t>(a.size()));
  return out;
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.allFinite();
}

// IEEE 754 binary16 with round-to-nearest-even, converted directly from
// double (no intermediate float rounding).
std::uint16_t to_half_bits(double x) noexcept;
double from_half_bits(std::uint16_t h) noexcept;
inline double round_to_half(double x) noexcept { return from_half_bits(to_half_bits(x)); }
inline double round_to_float(double x) noexcept { return static_cast<double>(static_cast<float>(x)); }

enum class Precision { kF64, kF32, kF16 };

std::string to_string(Precision p);
Precision parse_precision(const std::string& s);

/// Rounds every entry to the given storage precision, keeping double storage.
template <typename Derived>
void round_to_precision(Eigen::DenseBase<Derived>& x, Precision p) {
  switch (p) {
    case Precision::kF64:
      return;
    case Precision::kF32:
      x = x.derived().unaryExpr([](double v) { return round_to_float(v); });
      return;
    case Precision::kF16:
      x = x.derived().unaryExpr([](double v) { return round_to_half(v); });
      return;
  }
}

}  // namespace wrsec
