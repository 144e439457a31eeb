#include "wrsec/attack.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

namespace wrsec {

namespace {

double factorial(int n) {
  double f = 1.0;
  for (int k = 2; k <= n; ++k) f *= k;
  return f;
}

double median(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// Midpoint of the final bracket of a sign change of g on [lo, hi].
template <class G>
double bisect_sign(const G& g, double lo, double hi) {
  const bool lo_negative = g(lo) < 0.0;
  for (;;) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double v = g(mid);
    if (v == 0.0) return mid;
    if ((v < 0.0) == lo_negative) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

std::vector<OrderPair> parse_pairs(const std::string& text) {
  std::vector<OrderPair> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("pair '" + item + "' is not a:b");
    try {
      out.push_back({std::stoi(item.substr(0, colon)), std::stoi(item.substr(colon + 1))});
    } catch (const std::logic_error&) {
      throw std::invalid_argument("pair '" + item + "' is not a:b");
    }
  }
  return out;
}

std::vector<OrderPair> all_pairs(int order) {
  std::vector<OrderPair> out;
  for (int a = 1; a <= order; ++a) {
    for (int b = a + 1; b <= order; ++b) out.push_back({a, b});
  }
  return out;
}

void RecoveryConfig::validate() const {
  if (!(interval_lo < interval_hi) || !std::isfinite(interval_lo) || !std::isfinite(interval_hi)) {
    throw std::invalid_argument("RecoveryConfig: degenerate root-search interval");
  }
  if (grid_points < 3) throw std::invalid_argument("RecoveryConfig: grid needs >= 3 points");
  if (!(bisection_tol > 0.0)) throw std::invalid_argument("RecoveryConfig: bisection_tol must be > 0");
  if (newton_iterations < 0) throw std::invalid_argument("RecoveryConfig: negative Newton iterations");
  if (threads < 1) throw std::invalid_argument("RecoveryConfig: threads must be >= 1");
  for (const auto& p : pairs) {
    if (p.a < 1 || p.a >= p.b) {
      throw std::invalid_argument("RecoveryConfig: pair " + std::to_string(p.a) + ":" +
                                  std::to_string(p.b) + " needs 1 <= a < b");
    }
  }
}

std::vector<OrderPair> RecoveryConfig::resolved_pairs(int order) const {
  if (pairs.empty()) return all_pairs(order);
  for (const auto& p : pairs) {
    if (p.b > order) {
      throw InsufficientOrders("pair " + std::to_string(p.a) + ":" + std::to_string(p.b) +
                               " exceeds package order " + std::to_string(order));
    }
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// RatioInverter

RatioInverter::RatioInverter(Activation kind, int a, int b, const RecoveryConfig& cfg)
    : kind_(kind), a_(a), b_(b), cfg_(cfg) {
  cfg_.validate();
  if (a < 0 || b < 0 || a > kMaxOrder || b > kMaxOrder || a == b) {
    throw std::invalid_argument("RatioInverter: invalid order pair");
  }
  const int top = std::max(a_, b_);
  const bool has_slope = top + 1 <= kMaxOrder;
  const auto derivs = [&](double s) {
    std::array<double, kMaxOrder + 1> d{};
    act_derivs(kind_, s, std::span<double>(d.data(), static_cast<std::size_t>(top + (has_slope ? 2 : 1))));
    return d;
  };
  // Both are smooth: poles of f are zeros of the first, extrema zeros of the second.
  const auto denominator = [&](double s) { return derivs(s)[b_]; };
  const auto slope_numerator = [&](double s) {
    const auto d = derivs(s);
    return d[a_ + 1] * d[b_] - d[a_] * d[b_ + 1];
  };

  const auto n = static_cast<std::size_t>(cfg_.grid_points);
  const double span = cfg_.interval_hi - cfg_.interval_lo;
  std::vector<double> x(n), f(n), den(n), num(n, std::nan(""));
  for (std::size_t k = 0; k < n; ++k) {
    x[k] = cfg_.interval_lo + span * static_cast<double>(k) / static_cast<double>(n - 1);
    const auto d = derivs(x[k]);
    f[k] = d[a_] / d[b_];
    den[k] = d[b_];
    if (has_slope) num[k] = d[a_ + 1] * d[b_] - d[a_] * d[b_ + 1];
  }

  // Nodes: the grid, interior extrema, and every pole as a NaN marker flanked
  // by finite nodes, so f is monotone between consecutive finite nodes.
  std::vector<std::pair<double, double>> nodes;
  const auto add_pole = [&](double p, double left, double right) {
    const double w = 1e-12 * (1.0 + std::fabs(p));
    if (p - w > left) nodes.emplace_back(p - w, evaluate(p - w));
    nodes.emplace_back(p, std::nan(""));
    if (p + w < right) nodes.emplace_back(p + w, evaluate(p + w));
  };
  for (std::size_t k = 0; k < n; ++k) {
    const double left = k > 0 ? x[k - 1] : x[k];
    const double right = k + 1 < n ? x[k + 1] : x[k];
    if (den[k] == 0.0) {
      const auto d = derivs(x[k]);
      if (d[a_] == 0.0 && has_slope && d[b_ + 1] != 0.0) {
        nodes.emplace_back(x[k], d[a_ + 1] / d[b_ + 1]);  // removable: simple common zero
      } else {
        add_pole(x[k], left, right);
      }
    } else {
      nodes.emplace_back(x[k], f[k]);
    }
    if (k + 1 == n) continue;
    if ((den[k] < 0.0 && den[k + 1] > 0.0) || (den[k] > 0.0 && den[k + 1] < 0.0)) {
      add_pole(bisect_sign(denominator, x[k], x[k + 1]), x[k], x[k + 1]);
    }
    if ((num[k] < 0.0 && num[k + 1] > 0.0) || (num[k] > 0.0 && num[k + 1] < 0.0)) {
      const double e = bisect_sign(slope_numerator, x[k], x[k + 1]);
      if (e > x[k] && e < x[k + 1]) nodes.emplace_back(e, evaluate(e));
    }
  }
  std::sort(nodes.begin(), nodes.end(), [](const auto& p, const auto& q) {
    return p.first < q.first || (p.first == q.first && std::isnan(p.second) && !std::isnan(q.second));
  });
  nodes.erase(std::unique(nodes.begin(), nodes.end(), [](const auto& p, const auto& q) { return p.first == q.first; }),
              nodes.end());
  grid_.reserve(nodes.size());
  values_.reserve(nodes.size());
  for (const auto& [s, v] : nodes) {
    grid_.push_back(s);
    values_.push_back(v);
  }

  // Maximal monotone runs of finite values; neighbouring runs share an endpoint.
  const std::size_t m = values_.size();
  std::size_t k = 0;
  while (k < m) {
    while (k < m && !std::isfinite(values_[k])) ++k;
    if (k >= m) break;
    Run run{static_cast<Index>(k), static_cast<Index>(k), true};
    int direction = 0;
    std::size_t e = k;
    while (e + 1 < m && std::isfinite(values_[e + 1])) {
      const double d = values_[e + 1] - values_[e];
      const int step = d > 0 ? 1 : (d < 0 ? -1 : 0);
      if (direction == 0) {
        direction = step;
      } else if (step != 0 && step != direction) {
        break;
      }
      ++e;
    }
    run.end = static_cast<Index>(e);
    run.increasing = direction >= 0;
    runs_.push_back(run);
    if (e + 1 >= m || !std::isfinite(values_[e + 1])) {
      k = e + 1;
    } else {
      k = e;  // direction change: the turning point starts the next run
    }
  }
}

RatioInverter::Brackets RatioInverter::brackets(double r) const {
  Brackets out;
  std::uint64_t comparisons = 0;
  for (const Run& run : runs_) {
    const auto first = values_.begin() + run.begin;
    const auto last = values_.begin() + run.end + 1;
    comparisons += std::bit_width(static_cast<std::uint64_t>(run.end - run.begin + 1));
    // First index whose value has reached r in the run's direction.
    auto it = run.increasing
                  ? std::lower_bound(first, last, r)
                  : std::lower_bound(first, last, r, [](double v, double t) { return v > t; });
    auto p = static_cast<Index>(it - values_.begin());
    if (it != last && *it == r) {
      while (p <= run.end && values_[p] == r) out.exact.push_back(p++);
    } else if (it != first && it != last) {
      out.segments.push_back(p - 1);
    }
  }
  cost::madds(comparisons);
  std::sort(out.exact.begin(), out.exact.end());
  out.exact.erase(std::unique(out.exact.begin(), out.exact.end()), out.exact.end());
  std::sort(out.segments.begin(), out.segments.end());
  return out;
}

double RatioInverter::evaluate(double s) const {
  std::array<double, kMaxOrder + 1> d{};
  const int top = std::max(a_, b_);
  act_derivs(kind_, s, std::span<double>(d.data(), static_cast<std::size_t>(top) + 1));
  return d[a_] / d[b_];
}

std::pair<double, double> RatioInverter::evaluate_with_slope(double s) const {
  std::array<double, kMaxOrder + 1> d{};
  const int top = std::min(std::max(a_, b_) + 1, kMaxOrder);
  act_derivs(kind_, s, std::span<double>(d.data(), static_cast<std::size_t>(top) + 1));
  const double f = d[a_] / d[b_];
  if (std::max(a_, b_) + 1 > kMaxOrder) return {f, std::nan("")};
  const double slope = (d[a_ + 1] * d[b_] - d[a_] * d[b_ + 1]) / (d[b_] * d[b_]);
  return {f, slope};
}

double RatioInverter::refine(Index k, double r) const {
  double lo = grid_[k];
  double hi = grid_[k + 1];
  const bool lo_negative = values_[k] - r < 0.0;
  while (hi - lo > cfg_.bisection_tol) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double g = evaluate(mid) - r;
    if (!std::isfinite(g)) return std::nan("");
    if ((g < 0.0) == lo_negative) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  double s = 0.5 * (lo + hi);
  double best = std::fabs(evaluate(s) - r);
  for (int it = 0; it < cfg_.newton_iterations && best > 0.0; ++it) {
    const auto [f, slope] = evaluate_with_slope(s);
    if (!std::isfinite(slope) || slope == 0.0) break;
    const double next = s - (f - r) / slope;
    if (!(next >= grid_[k] && next <= grid_[k + 1])) break;
    const double res = std::fabs(evaluate(next) - r);
    if (!(res < best)) break;
    s = next;
    best = res;
  }
  return s;
}

std::vector<double> RatioInverter::roots(double r) const {
  std::vector<double> out;
  if (!std::isfinite(r)) return out;
  const Brackets br = brackets(r);
  for (Index k : br.exact) out.push_back(grid_[k]);
  for (Index k : br.segments) {
    const double s = refine(k, r);
    if (std::isfinite(s)) out.push_back(s);
  }
  const double tol = cfg_.root_residual_tol * (1.0 + std::fabs(r));
  std::erase_if(out, [&](double s) {
    const double res = std::fabs(evaluate(s) - r);
    return !(res <= tol);
  });
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end(),
                        [&](double x, double y) { return std::fabs(x - y) <= 2 * cfg_.bisection_tol; }),
            out.end());
  return out;
}

std::vector<double> invert_ratio(Activation kind, int a, int b, double r, const RecoveryConfig& cfg) {
  return RatioInverter(kind, a, b, cfg).roots(r);
}

// ---------------------------------------------------------------------------
// Preactivation recovery

PreactivationSolver::PreactivationSolver(Activation kind, int order, const RecoveryConfig& cfg)
    : kind_(kind), order_(order), cfg_(cfg) {
  cfg_.validate();
  if (order < 2) throw InsufficientOrders("ratio inversion needs Taylor order >= 2");
  for (const OrderPair& p : cfg_.resolved_pairs(order)) inverters_.emplace_back(kind, p.a, p.b, cfg_);
}

PreactivationResult PreactivationSolver::solve(const Mat64& column, double prior) const {
  if (column.cols() != order_ + 1) throw DimensionError("PreactivationSolver: column width mismatch");
  struct Usable {
    const RatioInverter* inverter;
    double r;
  };
  std::vector<Usable> usable;
  for (const RatioInverter& inv : inverters_) {
    // Row with the most numeric headroom for this pair.
    Index best_row = -1;
    double best_mag = cfg_.magnitude_gate;
    for (Index i = 0; i < column.rows(); ++i) {
      const double mag = std::min(std::fabs(column(i, inv.a())), std::fabs(column(i, inv.b())));
      if (mag > best_mag) {
        best_mag = mag;
        best_row = i;
      }
    }
    cost::madds(static_cast<std::uint64_t>(column.rows()));
    if (best_row < 0) continue;
    const double r = (factorial(inv.a()) * column(best_row, inv.a())) /
                     (factorial(inv.b()) * column(best_row, inv.b()));
    if (std::isfinite(r)) usable.push_back({&inv, r});
  }

  PreactivationResult result;
  if (usable.empty()) return result;

  // The true pre-activation solves every pair's equation, so one pair's roots
  // already contain it; the other pairs only serve to check. Further pairs
  // contribute candidates only while no candidate is consistent with all pairs.
  const auto consistency = [&](double s) {
    double total = 0.0;
    for (const Usable& u : usable) total += std::fabs(u.inverter->evaluate(s) - u.r) / (1.0 + std::fabs(u.r));
    return std::isfinite(total) ? total : HUGE_VAL;
  };
  std::vector<double> candidates;
  std::vector<double> residuals;
  for (const Usable& u : usable) {
    for (double s : u.inverter->roots(u.r)) {
      candidates.push_back(s);
      residuals.push_back(consistency(s));
    }
    if (!residuals.empty() && *std::min_element(residuals.begin(), residuals.end()) <= cfg_.residual_threshold) {
      break;
    }
  }
  if (candidates.empty()) return result;

  const double best = *std::min_element(residuals.begin(), residuals.end());
  std::size_t pick = candidates.size();
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    if (residuals[c] > best + 1e-12) continue;
    if (pick == candidates.size() ||
        std::fabs(candidates[c] - prior) < std::fabs(candidates[pick] - prior)) {
      pick = c;
    }
  }
  result.s = candidates[pick];
  result.residual = residuals[pick];
  result.status = result.residual <= cfg_.residual_threshold ? CoordinateStatus::kRecovered
                                                             : CoordinateStatus::kUnrecoverable;
  return result;
}

PreactivationResult recover_preactivation(Activation kind, const Mat64& column,
                                          const RecoveryConfig& cfg, double prior) {
  return PreactivationSolver(kind, static_cast<int>(column.cols()) - 1, cfg).solve(column, prior);
}

// ---------------------------------------------------------------------------
// Full recovery

namespace {

struct CoordinateOutcome {
  PreactivationResult pre;
  Vec64 w_column;                     // out
  std::vector<char> masked;           // out
  double act_value = 0.0;             // Act(s)
};

CoordinateOutcome recover_coordinate(const TaylorPackage& p, const PreactivationSolver& solver,
                                     const RecoveryConfig& cfg, Index j) {
  const Index hidden = p.hidden_dim();
  const Index out = p.out_dim();
  const int order = p.order;
  Mat64 column(out, order + 1);
  for (Index i = 0; i < out; ++i) {
    for (int n = 0; n <= order; ++n) column(i, n) = p.theta(i, n * hidden + j);
  }

  CoordinateOutcome res;
  res.pre = solver.solve(column, p.z0[j]);
  res.w_column = Vec64::Zero(out);
  res.masked.assign(static_cast<std::size_t>(out), 1);
  if (res.pre.status != CoordinateStatus::kRecovered) return res;

  std::array<double, kMaxOrder + 1> d{};
  act_derivs(p.kind, res.pre.s, std::span<double>(d.data(), static_cast<std::size_t>(order) + 1));
  res.act_value = d[0];
  std::vector<double> estimates;
  estimates.reserve(static_cast<std::size_t>(order));
  for (Index i = 0; i < out; ++i) {
    estimates.clear();
    for (int n = 1; n <= order; ++n) {
      const double theta = column(i, n);
      if (!(std::fabs(theta) > cfg.magnitude_gate) || d[n] == 0.0) continue;
      const double w = factorial(n) * theta / d[n];
      if (std::isfinite(w)) estimates.push_back(w);
    }
    if (estimates.empty()) continue;
    res.w_column[i] = median(estimates);
    res.masked[static_cast<std::size_t>(i)] = 0;
  }
  cost::madds(static_cast<std::uint64_t>(out) * static_cast<std::uint64_t>(2 * order + 1));
  return res;
}

}  // namespace

RecoveryReport recover_weights(const TaylorPackage& p, const RecoveryConfig& cfg,
                               const MlpWeights* ground_truth) {
  p.validate();
  cfg.validate();
  if (p.order < 2) {
    throw InsufficientOrders("package order " + std::to_string(p.order) +
                             " leaves no derivative pair with a >= 1");
  }
  const auto start = std::chrono::steady_clock::now();
  RecoveryReport report;
  const Index hidden = p.hidden_dim();
  const Index out = p.out_dim();

  {
    MeterScope scope;
    const PreactivationSolver solver(p.kind, p.order, cfg);
    std::vector<CoordinateOutcome> outcomes(static_cast<std::size_t>(hidden));

    const unsigned workers =
        static_cast<unsigned>(std::min<Index>(std::max(1u, cfg.threads), hidden));
    std::vector<CostMeter> worker_cost(workers);
    auto work = [&](unsigned w) {
      MeterScope local;
      for (Index j = w; j < hidden; j += workers) {
        outcomes[static_cast<std::size_t>(j)] = recover_coordinate(p, solver, cfg, j);
      }
      worker_cost[w] = local.meter();
    };
    if (workers == 1) {
      work(0);
    } else {
      std::vector<std::jthread> pool;
      for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
      pool.clear();
      // Worker scopes have no parent on their own threads; fold them in order.
      for (const CostMeter& m : worker_cost) cost::merge(m);
    }
    report.recovered.V = p.V;
    report.recovered.b = Vec64::Zero(hidden);
    report.recovered.W = Mat64::Zero(out, hidden);
    report.recovered.c = Vec64::Zero(out);
    report.preactivation = Vec64::Zero(hidden);
    report.coordinate_residual = Vec64::Zero(hidden);
    report.coordinate_status.resize(static_cast<std::size_t>(hidden));
    report.unrecoverable = MaskMat::Constant(out, hidden, true);

    for (Index j = 0; j < hidden; ++j) {
      const CoordinateOutcome& o = outcomes[static_cast<std::size_t>(j)];
      report.coordinate_status[static_cast<std::size_t>(j)] = o.pre.status;
      report.coordinate_residual[j] = o.pre.residual;
      if (o.pre.status != CoordinateStatus::kRecovered) continue;
      report.preactivation[j] = o.pre.s;
      report.recovered.b[j] = o.pre.s - p.z0[j];
      report.recovered.W.col(j) = o.w_column;
      for (Index i = 0; i < out; ++i) report.unrecoverable(i, j) = o.masked[static_cast<std::size_t>(i)] != 0;
    }
    // <Theta_{i,0}, 1> = <W_i, Act(s)> + c_i, restricted to recovered coordinates.
    for (Index i = 0; i < out; ++i) {
      double c = 0.0;
      for (Index j = 0; j < hidden; ++j) c += p.theta(i, j);
      for (Index j = 0; j < hidden; ++j) {
        const CoordinateOutcome& o = outcomes[static_cast<std::size_t>(j)];
        if (o.pre.status == CoordinateStatus::kRecovered) c -= report.recovered.W(i, j) * o.act_value;
      }
      report.recovered.c[i] = c;
    }
    cost::madds(2 * static_cast<std::uint64_t>(out) * static_cast<std::uint64_t>(hidden));
    report.cost = scope.meter();
  }

  if (ground_truth != nullptr) {
    if (ground_truth->W.rows() != out || ground_truth->W.cols() != hidden) {
      throw DimensionError("recover_weights: ground truth shape does not match package");
    }
    report.relative_error = relative_error_map(report.recovered.W, ground_truth->W, &report.unrecoverable);
    report.recovered_ratio = recovered_ratio(*report.relative_error);
  }
  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

Mat64 relative_error_map(const Mat64& w_rec, const Mat64& w, const MaskMat* mask) {
  if (w_rec.rows() != w.rows() || w_rec.cols() != w.cols()) {
    throw DimensionError("relative_error_map: shape mismatch");
  }
  if (mask != nullptr && (mask->rows() != w.rows() || mask->cols() != w.cols())) {
    throw DimensionError("relative_error_map: mask shape mismatch");
  }
  Mat64 err(w.rows(), w.cols());
  for (Index i = 0; i < w.rows(); ++i) {
    for (Index j = 0; j < w.cols(); ++j) {
      if (mask != nullptr && (*mask)(i, j)) {
        err(i, j) = HUGE_VAL;
      } else if (w(i, j) == 0.0) {
        err(i, j) = w_rec(i, j) == 0.0 ? 0.0 : HUGE_VAL;
      } else {
        err(i, j) = std::fabs(w_rec(i, j) - w(i, j)) / std::fabs(w(i, j));
      }
    }
  }
  return err;
}

double recovered_ratio(const Mat64& err_map, double threshold) {
  if (err_map.size() == 0) throw std::invalid_argument("recovered_ratio: empty error map");
  const auto below = (err_map.array() < threshold).count();
  return static_cast<double>(below) / static_cast<double>(err_map.size());
}

void error_heat_export(const Mat64& err_map, const std::string& path) {
  if (err_map.size() == 0) throw std::invalid_argument("error_heat_export: empty error map");
  if (path.empty()) throw IoError("error_heat_export: empty output path");
  std::ofstream f(path);
  if (!f) throw IoError("error_heat_export: cannot open '" + path + "'");
  f << "row,col,log10_rel_error\n";
  char buf[64];
  for (Index i = 0; i < err_map.rows(); ++i) {
    for (Index j = 0; j < err_map.cols(); ++j) {
      const double v = std::log10(std::max(err_map(i, j), 1e-16));
      if (std::isinf(v)) {
        std::snprintf(buf, sizeof buf, "inf");
      } else {
        std::snprintf(buf, sizeof buf, "%.17g", v);
      }
      f << i << ',' << j << ',' << buf << '\n';
    }
  }
  if (!f) throw IoError("error_heat_export: write failed for '" + path + "'");
}

}  // namespace wrsec
