#include "wrsec/stability.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace wrsec {

namespace {

constexpr double kAwayFromZero = 0.5;
constexpr double kNearZero = 0.25;

std::string format_value(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void StabilityConfig::validate() const {
  if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo <= hi)) {
    throw std::invalid_argument("stability interval must be finite with lo <= hi");
  }
  if (steps < 1) throw std::invalid_argument("stability grid needs at least one step");
  if (!(cap > 0.0)) throw std::invalid_argument("extreme-value cap must be positive");
}

Index StabilityGrid::flagged() const {
  Index n = 0;
  for (const auto& s : samples) n += s.flagged() ? 1 : 0;
  return n;
}

Index StabilityGrid::flagged_beyond(double min_abs_x) const {
  Index n = 0;
  for (const auto& s : samples) n += (s.flagged() && !s.derivative_zero && std::fabs(s.x) > min_abs_x) ? 1 : 0;
  return n;
}

Index StabilityGrid::flagged_within(double max_abs_x) const {
  Index n = 0;
  for (const auto& s : samples) n += (s.flagged() && !s.derivative_zero && std::fabs(s.x) <= max_abs_x) ? 1 : 0;
  return n;
}

Index StabilityGrid::derivative_zeros() const {
  Index n = 0;
  for (const auto& s : samples) n += s.derivative_zero ? 1 : 0;
  return n;
}

StabilityGrid ratio_grid(Activation kind, int a, int b, const StabilityConfig& cfg) {
  cfg.validate();
  StabilityGrid g;
  g.kind = kind;
  g.a = a;
  g.b = b;
  g.cfg = cfg;
  g.samples.reserve(static_cast<std::size_t>(cfg.steps));
  const double span = cfg.hi - cfg.lo;
  for (Index k = 0; k < cfg.steps; ++k) {
    const double x = cfg.steps == 1 ? cfg.lo : cfg.lo + span * double(k) / double(cfg.steps - 1);
    const RatioValue r = ratio(kind, a, b, x);
    g.samples.push_back({x, r.value, !r.finite, r.finite && std::fabs(r.value) > cfg.cap, r.denominator == 0.0});
  }
  return g;
}

PairSummary summarize_grid(const StabilityGrid& g) {
  PairSummary s{g.a, g.b, static_cast<Index>(g.samples.size()), 0, 0, 0, 0, 0, 0, 0.0, {}};
  for (const auto& x : g.samples) {
    s.nonfinite += x.nonfinite ? 1 : 0;
    s.extreme += x.extreme ? 1 : 0;
    s.derivative_zeros += x.derivative_zero ? 1 : 0;
    if (!x.nonfinite) s.max_abs_finite = std::max(s.max_abs_finite, std::fabs(x.value));
  }
  s.flagged = g.flagged();
  s.flagged_away_from_zero = g.flagged_beyond(kAwayFromZero);
  s.flagged_near_zero = g.flagged_within(kNearZero);
  return s;
}

const PairSummary& StabilitySummary::at(int a, int b) const {
  if (a < 1 || b < 1 || a > max_order || b > max_order) throw std::out_of_range("pair outside summary");
  return pairs[static_cast<std::size_t>((a - 1) * max_order + (b - 1))];
}

void write_grid_csv(const StabilityGrid& g, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << "x,value,nonfinite_flag,extreme_flag\n";
  for (const auto& s : g.samples) {
    f << format_value(s.x) << ',' << format_value(s.value) << ',' << (s.nonfinite ? 1 : 0) << ','
      << (s.extreme ? 1 : 0) << '\n';
  }
  if (!f) throw IoError("failed writing " + path);
}

std::string summary_json(const StabilitySummary& s) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["activation"] = to_string(s.kind);
  j["max_order"] = s.max_order;
  j["interval"] = {s.cfg.lo, s.cfg.hi};
  j["steps"] = s.cfg.steps;
  j["cap"] = s.cfg.cap;
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : s.pairs) {
    nlohmann::json e;
    e["a"] = p.a;
    e["b"] = p.b;
    e["samples"] = p.samples;
    e["nonfinite"] = p.nonfinite;
    e["extreme"] = p.extreme;
    e["flagged"] = p.flagged;
    e["derivative_zeros"] = p.derivative_zeros;
    e["flagged_away_from_zero"] = p.flagged_away_from_zero;
    e["flagged_near_zero"] = p.flagged_near_zero;
    e["max_abs_finite"] = p.max_abs_finite;
    if (!p.csv.empty()) e["csv"] = p.csv;
    pairs.push_back(std::move(e));
  }
  j["pairs"] = std::move(pairs);
  return j.dump(2);
}

StabilitySummary stability_report(Activation kind, int max_order, const StabilityConfig& cfg,
                                  const std::string& out_dir) {
  if (max_order < 1 || max_order > kMaxOrder) {
    throw UnsupportedOrder("stability max_order must lie in [1, " + std::to_string(kMaxOrder) + "]");
  }
  cfg.validate();
  namespace fs = std::filesystem;
  if (!out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  }
  StabilitySummary s;
  s.kind = kind;
  s.max_order = max_order;
  s.cfg = cfg;
  for (int a = 1; a <= max_order; ++a) {
    for (int b = 1; b <= max_order; ++b) {
      const StabilityGrid g = ratio_grid(kind, a, b, cfg);
      PairSummary p = summarize_grid(g);
      if (!out_dir.empty()) {
        p.csv = to_string(kind) + "_ratio_" + std::to_string(a) + "_" + std::to_string(b) + ".csv";
        write_grid_csv(g, (fs::path(out_dir) / p.csv).string());
      }
      s.pairs.push_back(std::move(p));
    }
  }
  if (!out_dir.empty()) {
    const auto path = (fs::path(out_dir) / (to_string(kind) + "_summary.json")).string();
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << summary_json(s) << '\n';
    if (!f) throw IoError("failed writing " + path);
  }
  return s;
}

}  // namespace wrsec
