#include "wrsec/scheme.hpp"

#include <array>
#include <string>

namespace wrsec {

namespace {

std::string shape(const Mat64& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

double factorial(int n) {
  double f = 1.0;
  for (int k = 2; k <= n; ++k) f *= k;
  return f;
}

}  // namespace

void MlpWeights::validate() const {
  if (V.rows() < 1 || V.cols() < 1 || W.rows() < 1) throw DimensionError("MlpWeights: empty layer");
  if (b.size() != V.rows() || W.cols() != V.rows() || c.size() != W.rows()) {
    throw DimensionError("MlpWeights: inconsistent shapes V " + shape(V) + ", b " +
                         std::to_string(b.size()) + ", W " + shape(W) + ", c " +
                         std::to_string(c.size()));
  }
  if (!V.allFinite() || !b.allFinite() || !W.allFinite() || !c.allFinite()) {
    throw NumericError("MlpWeights: non-finite parameter");
  }
}

Vec64 MlpWeights::flatten() const {
  Vec64 out(param_count());
  Index k = 0;
  out.segment(k, V.size()) = Eigen::Map<const Vec64>(V.data(), V.size());
  k += V.size();
  out.segment(k, b.size()) = b;
  k += b.size();
  out.segment(k, W.size()) = Eigen::Map<const Vec64>(W.data(), W.size());
  k += W.size();
  out.segment(k, c.size()) = c;
  return out;
}

void TaylorPackage::validate() const {
  if (order < 1) throw DimensionError("TaylorPackage: order must be >= 1");
  if (order > kMaxOrder) throw UnsupportedOrder("TaylorPackage: order above kMaxOrder");
  if (V.rows() < 1 || V.cols() < 1 || theta.rows() < 1) {
    throw DimensionError("TaylorPackage: empty layer");
  }
  if (z0.size() != V.rows() || theta.cols() != (order + 1) * V.rows()) {
    throw DimensionError("TaylorPackage: theta " + shape(theta) + " does not match hidden " +
                         std::to_string(V.rows()) + " and order " + std::to_string(order));
  }
  if (!V.allFinite() || !z0.allFinite() || !theta.allFinite()) {
    throw NumericError("TaylorPackage: non-finite entry");
  }
}

void SameConfig::validate() const {
  if (!(p >= 1.0)) throw std::invalid_argument("SameConfig: p must be >= 1");
  if (!(delta > 0.0) || !(delta_y > 0.0)) {
    throw std::invalid_argument("SameConfig: thresholds must be positive");
  }
  if (!(min_pass_fraction > 0.0 && min_pass_fraction <= 1.0)) {
    throw std::invalid_argument("SameConfig: min_pass_fraction must lie in (0, 1]");
  }
}

Mat64 gaussian_matrix(Index rows, Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat64 m(rows, cols);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = dist(rng);
  return m;
}

MlpWeights train_synthetic(Index in_dim, Index hidden_dim, Index out_dim, double weight_stddev,
                           Rng& rng) {
  if (in_dim < 1 || hidden_dim < 1 || out_dim < 1) {
    throw DimensionError("train_synthetic: dimensions must be >= 1");
  }
  if (!(weight_stddev > 0.0)) throw std::invalid_argument("train_synthetic: stddev must be > 0");
  MlpWeights w;
  w.V = gaussian_matrix(hidden_dim, in_dim, weight_stddev, rng);
  w.b = gaussian_matrix(hidden_dim, 1, weight_stddev, rng);
  w.W = gaussian_matrix(out_dim, hidden_dim, weight_stddev, rng);
  w.c = gaussian_matrix(out_dim, 1, weight_stddev, rng);
  return w;
}

MlpWeights train_synthetic(Index in_dim, Index hidden_dim, Index out_dim, double weight_stddev,
                           std::uint64_t seed) {
  Rng rng(seed);
  return train_synthetic(in_dim, hidden_dim, out_dim, weight_stddev, rng);
}

Vec64 run_mlp(const MlpWeights& w, Activation kind, const Vec64& x) {
  if (x.size() != w.in_dim()) throw DimensionError("run_mlp: input length mismatch");
  const Vec64 z = matvec(w.V, x);
  Vec64 h(w.hidden_dim());
  for (Index j = 0; j < h.size(); ++j) h[j] = act_deriv(kind, 0, z[j] + w.b[j]);
  Vec64 y(w.out_dim());
  for (Index i = 0; i < y.size(); ++i) {
    y[i] = dot(w.W.data() + i * w.W.cols(), h.data(), h.size()) + w.c[i];
  }
  cost::madds(static_cast<std::uint64_t>(w.W.size()));
  return y;
}

Mat64 run_mlp(const MlpWeights& w, Activation kind, const Mat64& xs) {
  Mat64 ys(xs.rows(), w.out_dim());
  for (Index t = 0; t < xs.rows(); ++t) {
    ys.row(t) = run_mlp(w, kind, Vec64(xs.row(t).transpose())).transpose();
  }
  return ys;
}

Vec64 calibrate_z0(const MlpWeights& w, const Mat64& inputs) {
  if (inputs.rows() == 0) throw std::invalid_argument("calibrate_z0: empty calibration set");
  if (inputs.cols() != w.in_dim()) throw DimensionError("calibrate_z0: input width mismatch");
  Vec64 zmin, zmax;
  for (Index k = 0; k < inputs.rows(); ++k) {
    const Vec64 z = matvec(w.V, Vec64(inputs.row(k).transpose()));
    if (k == 0) {
      zmin = zmax = z;
    } else {
      zmin = zmin.cwiseMin(z);
      zmax = zmax.cwiseMax(z);
    }
  }
  return (zmax + zmin) / 2.0;
}

TaylorPackage release(const MlpWeights& w, const Vec64& z0, int order, Activation kind,
                      Precision storage) {
  w.validate();
  if (order < 1 || order > kMaxOrder) {
    throw UnsupportedOrder("release: Taylor order " + std::to_string(order) + " outside [1, " +
                           std::to_string(kMaxOrder) + "]");
  }
  if (z0.size() != w.hidden_dim()) throw DimensionError("release: z0 length mismatch");

  const Index hidden = w.hidden_dim();
  TaylorPackage p;
  p.V = w.V;
  p.z0 = z0;
  p.order = order;
  p.kind = kind;
  p.storage = storage;
  p.theta.resize(w.out_dim(), (order + 1) * hidden);

  std::array<double, kMaxOrder + 1> derivs{};
  std::array<double, kMaxOrder + 1> inv_factorial{};
  for (int n = 0; n <= order; ++n) inv_factorial[n] = 1.0 / factorial(n);
  // The scalar c_i is spread evenly over the hidden coordinates so that
  // <Theta_{i,0}, 1> = <W_i, Act(z0 + b)> + c_i.
  const Vec64 c_share = w.c / static_cast<double>(hidden);

  for (Index j = 0; j < hidden; ++j) {
    act_derivs(kind, z0[j] + w.b[j],
               std::span<double>(derivs.data(), static_cast<std::size_t>(order) + 1));
    for (int n = 0; n <= order; ++n) {
      const double scale = derivs[n] * inv_factorial[n];
      for (Index i = 0; i < w.out_dim(); ++i) {
        double v = w.W(i, j) * scale;
        if (n == 0) v += c_share[i];
        p.theta(i, n * hidden + j) = v;
      }
    }
  }
  cost::madds(static_cast<std::uint64_t>(p.theta.size()));
  round_to_precision(p.theta, storage);
  p.validate();
  return p;
}

Vec64 run_taylor(const TaylorPackage& p, const Vec64& x) {
  if (x.size() != p.in_dim()) throw DimensionError("run_taylor: input length mismatch");
  const Index hidden = p.hidden_dim();
  const Vec64 d = matvec(p.V, x) - p.z0;
  Vec64 power = Vec64::Ones(hidden);
  Vec64 y = Vec64::Zero(p.out_dim());
  for (int n = 0; n <= p.order; ++n) {
    if (n > 0) power.array() *= d.array();
    for (Index i = 0; i < y.size(); ++i) {
      y[i] += dot(p.theta.data() + i * p.theta.cols() + n * hidden, power.data(), hidden);
    }
  }
  cost::madds(static_cast<std::uint64_t>(hidden) * static_cast<std::uint64_t>(p.order + 1) +
              static_cast<std::uint64_t>(p.theta.size()));
  return y;
}

Mat64 run_taylor(const TaylorPackage& p, const Mat64& xs) {
  Mat64 ys(xs.rows(), p.out_dim());
  for (Index t = 0; t < xs.rows(); ++t) {
    ys.row(t) = run_taylor(p, Vec64(xs.row(t).transpose())).transpose();
  }
  return ys;
}

namespace {

void check_same_shapes(const MlpWeights& a, const MlpWeights& b) {
  if (a.V.rows() != b.V.rows() || a.V.cols() != b.V.cols() || a.W.rows() != b.W.rows() ||
      a.b.size() != b.b.size() || a.c.size() != b.c.size() || a.W.cols() != b.W.cols()) {
    throw DimensionError("weights shape mismatch");
  }
}

}  // namespace

double dist_weights(const MlpWeights& a, const MlpWeights& b, double p) {
  check_same_shapes(a, b);
  return entrywise_norm(a.flatten(), b.flatten(), p);
}

bool same_weights(const MlpWeights& a, const MlpWeights& b, const SameConfig& cfg) {
  if (cfg.criterion == WeightCriterion::kNorm) return dist_weights(a, b, cfg.p) <= cfg.delta;
  check_same_shapes(a, b);
  const Vec64 fa = a.flatten();
  const Vec64 fb = b.flatten();
  Index passed = 0;
  for (Index k = 0; k < fa.size(); ++k) {
    const double diff = std::fabs(fa[k] - fb[k]);
    if (std::isfinite(fa[k]) && diff <= cfg.delta * std::fabs(fb[k])) ++passed;
  }
  return static_cast<double>(passed) >= cfg.min_pass_fraction * static_cast<double>(fa.size());
}

}  // namespace wrsec
