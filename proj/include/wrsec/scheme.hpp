#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "wrsec/activations.hpp"
#include "wrsec/core.hpp"

namespace wrsec {

using Rng = std::mt19937_64;

/// Two-layer MLP y = W Act(V x + b) + c. Row i of W feeds output i.
struct MlpWeights {
  Mat64 V;  // hidden x in
  Vec64 b;  // hidden
  Mat64 W;  // out x hidden
  Vec64 c;  // out

  Index in_dim() const { return V.cols(); }
  Index hidden_dim() const { return V.rows(); }
  Index out_dim() const { return W.rows(); }
  Index param_count() const { return V.size() + b.size() + W.size() + c.size(); }

  /// Throws DimensionError / NumericError on inconsistent shapes or non-finite values.
  void validate() const;
  /// V, b, W, c concatenated in that order (row-major within matrices).
  Vec64 flatten() const;
};

/// Released TaylorMLP artifact. theta is out x ((N+1) * hidden): the block of
/// columns [n*hidden, (n+1)*hidden) holds Theta_{., n}. That is the row-major
/// layout of an (out, N+1, hidden) tensor.
struct TaylorPackage {
  Mat64 V;
  Vec64 z0;
  Mat64 theta;
  int order = 0;
  Activation kind = Activation::kSiLU;
  Precision storage = Precision::kF64;

  Index in_dim() const { return V.cols(); }
  Index hidden_dim() const { return V.rows(); }
  Index out_dim() const { return theta.rows(); }

  auto coefficients(int n) const { return theta.middleCols(n * hidden_dim(), hidden_dim()); }
  auto coefficients(int n) { return theta.middleCols(n * hidden_dim(), hidden_dim()); }

  void validate() const;
};

enum class WeightCriterion {
  kRelativeElementwise,  // |a - b| <= delta |b| on at least min_pass_fraction of entries
  kNorm,                 // entrywise p-norm of the difference <= delta
};

struct SameConfig {
  double p = 2.0;
  WeightCriterion criterion = WeightCriterion::kRelativeElementwise;
  double delta = 0.01;
  double min_pass_fraction = 0.99;
  /// Outputs are Same when ||a - b||_p <= delta_y * max(||a||_p, ||b||_p).
  double delta_y = 1e-3;

  void validate() const;
};

MlpWeights train_synthetic(Index in_dim, Index hidden_dim, Index out_dim, double weight_stddev,
                           std::uint64_t seed);
MlpWeights train_synthetic(Index in_dim, Index hidden_dim, Index out_dim, double weight_stddev,
                           Rng& rng);

/// K x dim matrix of i.i.d. N(0, stddev^2) entries, filled row by row.
Mat64 gaussian_matrix(Index rows, Index cols, double stddev, Rng& rng);

Vec64 run_mlp(const MlpWeights& w, Activation kind, const Vec64& x);
/// Rows of xs are independent inputs; rows of the result are the outputs.
Mat64 run_mlp(const MlpWeights& w, Activation kind, const Mat64& xs);

/// Per-coordinate midpoint of the pre-activation extrema z = V x over the rows of inputs.
Vec64 calibrate_z0(const MlpWeights& w, const Mat64& inputs);

TaylorPackage release(const MlpWeights& w, const Vec64& z0, int order, Activation kind,
                      Precision storage);

Vec64 run_taylor(const TaylorPackage& p, const Vec64& x);
Mat64 run_taylor(const TaylorPackage& p, const Mat64& xs);

/// Entrywise p-norm (p may be +inf) of the concatenated parameter difference.
double dist_weights(const MlpWeights& a, const MlpWeights& b, double p);
bool same_weights(const MlpWeights& a, const MlpWeights& b, const SameConfig& cfg);

template <typename DerivedA, typename DerivedB>
double entrywise_norm(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b,
                      double p) {
  const auto diff = (a.derived().array() - b.derived().array()).abs().eval();
  if (std::isinf(p)) return diff.size() == 0 ? 0.0 : diff.maxCoeff();
  return std::pow(diff.pow(p).sum(), 1.0 / p);
}

template <typename DerivedA, typename DerivedB>
bool same_outputs(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b,
                  const SameConfig& cfg) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("same_outputs: shape mismatch");
  }
  if (!a.allFinite() || !b.allFinite()) return false;
  const auto norm = [&](const auto& m) {
    const auto mag = m.derived().array().abs().eval();
    if (std::isinf(cfg.p)) return mag.size() == 0 ? 0.0 : mag.maxCoeff();
    return std::pow(mag.pow(cfg.p).sum(), 1.0 / cfg.p);
  };
  const double scale = std::max(norm(a), norm(b));
  return entrywise_norm(a, b, cfg.p) <= cfg.delta_y * scale;
}

}  // namespace wrsec
