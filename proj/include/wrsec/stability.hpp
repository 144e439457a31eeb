#pragma once

#include <string>
#include <vector>

#include "wrsec/activations.hpp"
#include "wrsec/core.hpp"

namespace wrsec {

struct StabilityConfig {
  double lo = -10.0;
  double hi = 10.0;
  Index steps = 2001;
  /// |f| above this counts as an extreme value.
  double cap = 1e6;

  void validate() const;
};

struct StabilitySample {
  double x;
  double value;
  bool nonfinite;
  bool extreme;
  /// Act^(b)(x) is exactly zero here, so the ratio has a true pole rather
  /// than a numerical one.
  bool derivative_zero;

  bool flagged() const { return nonfinite || extreme; }
};

/// Dense samples of f_{a,b} = Act^(a) / Act^(b). Values are those of ratio(),
/// non-finite ones included.
struct StabilityGrid {
  Activation kind = Activation::kSiLU;
  int a = 1;
  int b = 1;
  StabilityConfig cfg;
  std::vector<StabilitySample> samples;

  Index flagged() const;
  /// Flagged samples with |x| > min_abs_x that are not derivative zeros.
  Index flagged_beyond(double min_abs_x) const;
  /// Flagged samples with |x| <= max_abs_x that are not derivative zeros.
  Index flagged_within(double max_abs_x) const;
  Index derivative_zeros() const;
};

StabilityGrid ratio_grid(Activation kind, int a, int b, const StabilityConfig& cfg = {});

struct PairSummary {
  int a;
  int b;
  Index samples;
  Index nonfinite;
  Index extreme;
  Index flagged;
  Index derivative_zeros;
  Index flagged_away_from_zero;  // |x| > 0.5, derivative zeros excluded
  Index flagged_near_zero;       // |x| <= 0.25, derivative zeros excluded
  double max_abs_finite;
  std::string csv;  // file name inside the report directory; empty when not written
};

struct StabilitySummary {
  Activation kind = Activation::kSiLU;
  int max_order = 5;
  StabilityConfig cfg;
  std::vector<PairSummary> pairs;  // row-major over a, b in [1, max_order]

  const PairSummary& at(int a, int b) const;
};

PairSummary summarize_grid(const StabilityGrid& grid);

/// All pairs a, b in [1, max_order]. When out_dir is non-empty, writes one CSV
/// per pair (x,value,nonfinite_flag,extreme_flag) and <kind>_summary.json.
StabilitySummary stability_report(Activation kind, int max_order, const StabilityConfig& cfg,
                                  const std::string& out_dir = "");

void write_grid_csv(const StabilityGrid& grid, const std::string& path);
std::string summary_json(const StabilitySummary& summary);

}  // namespace wrsec
