#pragma once

#include <optional>
#include <string>
#include <vector>

#include "wrsec/activations.hpp"
#include "wrsec/core.hpp"
#include "wrsec/scheme.hpp"

namespace wrsec {

using MaskMat = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct OrderPair {
  int a;
  int b;
  bool operator==(const OrderPair&) const = default;
};

/// Parses "1:2,1:3" into pairs.
std::vector<OrderPair> parse_pairs(const std::string& text);
std::vector<OrderPair> all_pairs(int order);

struct RecoveryConfig {
  /// Empty means every (a, b) with 1 <= a < b <= N. Order 0 is never used:
  /// Theta_{i,0} also carries the output bias.
  std::vector<OrderPair> pairs;
  double interval_lo = -20.0;
  double interval_hi = 20.0;
  int grid_points = 4001;
  double bisection_tol = 1e-12;
  int newton_iterations = 5;
  /// Roots must satisfy |f(s) - r| <= root_residual_tol * (1 + |r|).
  double root_residual_tol = 1e-9;
  /// A coordinate is recovered when its summed relative residual over all
  /// usable pairs is at most this value.
  double residual_threshold = 1e-6;
  double magnitude_gate = 1e-30;
  unsigned threads = 1;

  void validate() const;
  std::vector<OrderPair> resolved_pairs(int order) const;
};

struct InsufficientOrders : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Solves f_{a,b}(s) = r on a fixed interval. f is tabulated once on nodes:
/// the bracketing grid plus every interior extremum and a NaN marker at every
/// pole, so f is monotone between consecutive finite nodes. The nodes are
/// split into maximal monotone runs so each query needs one binary search per
/// run instead of a scan. The brackets found are exactly the sign changes a
/// dense scan over the nodes would find.
class RatioInverter {
 public:
  RatioInverter(Activation kind, int a, int b, const RecoveryConfig& cfg);

  struct Brackets {
    std::vector<Index> segments;  // k such that f_k - r and f_{k+1} - r have strictly opposite signs
    std::vector<Index> exact;     // k such that f_k == r
  };
  Brackets brackets(double r) const;

  /// All roots in the interval, ascending, each meeting the residual tolerance.
  std::vector<double> roots(double r) const;

  double evaluate(double s) const;
  /// f and df/ds at s (quotient rule on analytic derivatives).
  std::pair<double, double> evaluate_with_slope(double s) const;

  const std::vector<double>& grid() const { return grid_; }
  const std::vector<double>& values() const { return values_; }
  int a() const { return a_; }
  int b() const { return b_; }

 private:
  struct Run {
    Index begin;
    Index end;  // inclusive
    bool increasing;
  };

  double refine(Index k, double r) const;

  Activation kind_;
  int a_;
  int b_;
  RecoveryConfig cfg_;
  std::vector<double> grid_;
  std::vector<double> values_;
  std::vector<Run> runs_;
};

std::vector<double> invert_ratio(Activation kind, int a, int b, double r, const RecoveryConfig& cfg);

enum class CoordinateStatus { kRecovered, kUnrecoverable };

struct PreactivationResult {
  double s = 0.0;
  double residual = HUGE_VAL;
  CoordinateStatus status = CoordinateStatus::kUnrecoverable;
};

/// Recovers s_j = (z0 + b)[j] from the Theta entries of one hidden coordinate.
class PreactivationSolver {
 public:
  PreactivationSolver(Activation kind, int order, const RecoveryConfig& cfg);

  /// column is out x (N+1): column(i, n) = Theta_{i,n}[j]. Among candidates
  /// whose residuals tie, the one nearest prior wins.
  PreactivationResult solve(const Mat64& column, double prior = 0.0) const;

  int order() const { return order_; }
  const std::vector<RatioInverter>& inverters() const { return inverters_; }

 private:
  Activation kind_;
  int order_;
  RecoveryConfig cfg_;
  std::vector<RatioInverter> inverters_;
};

PreactivationResult recover_preactivation(Activation kind, const Mat64& column,
                                          const RecoveryConfig& cfg, double prior = 0.0);

struct RecoveryReport {
  MlpWeights recovered;  // V copied from the package
  Vec64 preactivation;   // recovered s = z0 + b
  Vec64 coordinate_residual;
  std::vector<CoordinateStatus> coordinate_status;
  MaskMat unrecoverable;  // out x hidden
  std::optional<Mat64> relative_error;
  std::optional<double> recovered_ratio;
  double runtime_seconds = 0.0;
  CostMeter cost;

  Index unrecoverable_count() const { return unrecoverable.count(); }
};

RecoveryReport recover_weights(const TaylorPackage& p, const RecoveryConfig& cfg,
                               const MlpWeights* ground_truth = nullptr);

/// |W_rec - W| / |W| elementwise. W == 0 gives 0 when W_rec == 0 and +inf
/// otherwise; masked entries are +inf.
Mat64 relative_error_map(const Mat64& w_rec, const Mat64& w, const MaskMat* mask = nullptr);

/// Fraction of entries strictly below threshold.
double recovered_ratio(const Mat64& err_map, double threshold = 0.01);

/// CSV "row,col,log10_rel_error" with log10(max(err, 1e-16)).
void error_heat_export(const Mat64& err_map, const std::string& path);

}  // namespace wrsec
