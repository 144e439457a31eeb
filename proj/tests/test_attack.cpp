#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "wrsec/attack.hpp"

using namespace wrsec;

namespace {

constexpr Activation kKinds[] = {Activation::kSiLU, Activation::kGeLU};

double factorial(int n) { return n <= 1 ? 1.0 : n * factorial(n - 1); }

// Brute-force bracket scan over the same nodes the inverter tabulates.
RatioInverter::Brackets dense_scan(const RatioInverter& inv, double r) {
  RatioInverter::Brackets out;
  const auto& f = inv.values();
  for (std::size_t k = 0; k < f.size(); ++k) {
    if (!std::isfinite(f[k])) continue;
    if (f[k] == r) out.exact.push_back(static_cast<Index>(k));
    if (k + 1 < f.size() && std::isfinite(f[k + 1])) {
      const double g0 = f[k] - r, g1 = f[k + 1] - r;
      if ((g0 < 0 && g1 > 0) || (g0 > 0 && g1 < 0)) out.segments.push_back(static_cast<Index>(k));
    }
  }
  return out;
}

// Theta column for one hidden coordinate with pre-activation s.
Mat64 forward_column(Activation kind, const Vec64& w_col, double s, int order) {
  Mat64 col(w_col.size(), order + 1);
  for (Index i = 0; i < w_col.size(); ++i) {
    for (int n = 0; n <= order; ++n) col(i, n) = w_col[i] * act_deriv(kind, n, s) / factorial(n);
  }
  return col;
}

TaylorPackage make_package(Index in, Index hidden, Index out, int order, Activation kind,
                           Precision prec, std::uint64_t seed, MlpWeights* truth) {
  *truth = train_synthetic(in, hidden, out, 0.02, seed);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const Vec64 z0 = calibrate_z0(*truth, gaussian_matrix(128, in, 1.0, rng));
  return release(*truth, z0, order, kind, prec);
}

}  // namespace

TEST_CASE("inverting a forward-evaluated ratio finds the original point") {
  const RecoveryConfig cfg;
  for (Activation kind : kKinds) {
    for (auto [a, b] : all_pairs(5)) {
      const double r = ratio(kind, a, b, 1.3).value;
      const auto roots = invert_ratio(kind, a, b, r, cfg);
      bool found = false;
      for (double s : roots) found = found || std::fabs(s - 1.3) <= 1e-9;
      CHECK_MESSAGE(found, to_string(kind) << " " << a << ":" << b);
    }
  }
}

TEST_CASE("targets outside the ratio's range have no roots") {
  const RecoveryConfig cfg;
  const RatioInverter inv(Activation::kSiLU, 1, 2, cfg);
  double biggest = 0.0;
  for (double v : inv.values()) {
    if (std::isfinite(v)) biggest = std::max(biggest, std::fabs(v));
  }
  CHECK(inv.roots(10 * biggest + 1).empty());
  CHECK(inv.roots(-10 * biggest - 1).empty());
  CHECK(inv.roots(std::nan("")).empty());
}

TEST_CASE("multi-root targets return every root") {
  const RecoveryConfig cfg;
  // SiLU'/SiLU'' is not monotone on [-20, 20]; pick the value at a point and
  // confirm the scan finds the same number of crossings.
  std::size_t best = 0;
  for (Activation kind : kKinds) {
    for (auto [a, b] : all_pairs(4)) {
      const RatioInverter inv(kind, a, b, cfg);
      for (double s : {-3.0, -1.1, 0.4, 2.7}) {
        const double r = inv.evaluate(s);
        const auto roots = inv.roots(r);
        const auto oracle = dense_scan(inv, r);
        CHECK(roots.size() <= oracle.segments.size() + oracle.exact.size());
        for (double root : roots) {
          CHECK(std::fabs(inv.evaluate(root) - r) <= 1e-9 * (1 + std::fabs(r)));
        }
        best = std::max(best, roots.size());
      }
    }
  }
  CHECK(best >= 2);
}

TEST_CASE("monotone-run brackets equal a dense scan") {
  const RecoveryConfig cfg;
  std::mt19937_64 rng(4);
  for (Activation kind : kKinds) {
    for (auto [a, b] : all_pairs(5)) {
      const RatioInverter inv(kind, a, b, cfg);
      std::uniform_int_distribution<std::size_t> pick(0, inv.values().size() - 1);
      std::normal_distribution<double> noise(0.0, 1.0);
      for (int t = 0; t < 60; ++t) {
        double r = inv.values()[pick(rng)];
        if (!std::isfinite(r)) continue;
        if (t % 3 == 1) r += noise(rng) * 1e-3 * (1 + std::fabs(r));  // between grid values
        if (t % 3 == 2) r = noise(rng) * 10;
        const auto fast = inv.brackets(r);
        const auto slow = dense_scan(inv, r);
        REQUIRE(fast.segments == slow.segments);
        REQUIRE(fast.exact == slow.exact);
      }
    }
  }
}

TEST_CASE("targets between a grid point and a pole or extremum are found") {
  const RecoveryConfig cfg;
  const double step = (cfg.interval_hi - cfg.interval_lo) / (cfg.grid_points - 1);
  for (Activation kind : kKinds) {
    for (auto [a, b] : all_pairs(5)) {
      const RatioInverter inv(kind, a, b, cfg);
      const auto& x = inv.grid();
      const auto& f = inv.values();
      Index poles = 0;
      for (std::size_t k = 1; k + 1 < x.size(); ++k) {
        const bool pole = std::isnan(f[k]);
        const bool extremum = !pole && std::isfinite(f[k - 1]) && std::isfinite(f[k + 1]) &&
                              (f[k] - f[k - 1]) * (f[k + 1] - f[k]) < 0;
        if (!pole && !extremum) continue;
        poles += pole ? 1 : 0;
        for (double offset : {-0.3 * step, -0.03 * step, 0.03 * step, 0.3 * step}) {
          const double s = x[k] + offset;
          if (s <= cfg.interval_lo || s >= cfg.interval_hi) continue;
          const double r = inv.evaluate(s);
          if (!std::isfinite(r)) continue;
          double nearest = HUGE_VAL;
          for (double root : inv.roots(r)) nearest = std::min(nearest, std::fabs(root - s));
          INFO(to_string(kind) << " " << a << ":" << b << " s=" << s);
          CHECK(nearest <= 1e-8);
        }
      }
      // Odd derivatives of order >= 3 vanish at the origin for both kinds; the
      // first derivative does not.
      if (b % 2 == 1 && (a == 1 || a % 2 == 0)) CHECK(poles >= 1);
    }
  }
}

TEST_CASE("pre-activation recovery from a forward-constructed column") {
  const RecoveryConfig cfg;
  Rng rng(12);
  const Vec64 w_col = gaussian_matrix(16, 1, 0.02, rng);
  for (Activation kind : kKinds) {
    for (int order : {2, 4, 8}) {
      const auto res = recover_preactivation(kind, forward_column(kind, w_col, -0.4, order), cfg);
      CHECK(res.status == CoordinateStatus::kRecovered);
      CHECK(std::fabs(res.s + 0.4) <= 1e-8);
    }
  }
}

TEST_CASE("coordinate with no information is unrecoverable") {
  const RecoveryConfig cfg;
  const auto res = recover_preactivation(Activation::kSiLU, Mat64::Zero(8, 5), cfg);
  CHECK(res.status == CoordinateStatus::kUnrecoverable);
  CHECK_THROWS_AS(recover_preactivation(Activation::kSiLU, Mat64::Ones(8, 2), cfg), InsufficientOrders);
}

TEST_CASE("half-precision outlier columns do not crash") {
  const RecoveryConfig cfg;
  Rng rng(3);
  Vec64 w_col = gaussian_matrix(8, 1, 0.02, rng);
  w_col[0] = 3.0;  // outlier weight
  for (Activation kind : kKinds) {
    for (double s : {-9.5, -4.0, 0.0, 6.5, 12.0}) {
      Mat64 col = forward_column(kind, w_col, s, 4);
      round_to_precision(col, Precision::kF16);
      PreactivationResult res;
      CHECK_NOTHROW(res = recover_preactivation(kind, col, cfg));
      if (res.status == CoordinateStatus::kRecovered) CHECK(res.residual <= cfg.residual_threshold);
    }
  }
}

TEST_CASE("full recovery on an f64 package") {
  MlpWeights truth;
  const auto p = make_package(64, 256, 64, 4, Activation::kSiLU, Precision::kF64, 1, &truth);
  const auto rep = recover_weights(p, RecoveryConfig{}, &truth);
  REQUIRE(rep.recovered_ratio.has_value());
  CHECK(*rep.recovered_ratio >= 0.995);
  CHECK((rep.recovered.b - truth.b).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK((rep.recovered.c - truth.c).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK(rep.recovered.V == truth.V);
  CHECK(same_weights(rep.recovered, truth, SameConfig{}));
  CHECK(rep.cost.total() > 0);
}

TEST_CASE("an all-zero weight column is masked and still counted") {
  MlpWeights truth = train_synthetic(16, 32, 8, 0.02, 5);
  truth.W.col(7).setZero();
  const auto p = release(truth, Vec64::Zero(32), 4, Activation::kGeLU, Precision::kF64);
  const auto rep = recover_weights(p, RecoveryConfig{}, &truth);
  CHECK(rep.coordinate_status[7] == CoordinateStatus::kUnrecoverable);
  CHECK(rep.unrecoverable.col(7).all());
  CHECK(rep.recovered.W.col(7).isZero(0.0));
  CHECK(*rep.recovered_ratio == doctest::Approx(31.0 / 32.0));
}

TEST_CASE("recovery needs at least order 2") {
  MlpWeights truth;
  const auto p = make_package(8, 16, 4, 1, Activation::kSiLU, Precision::kF64, 2, &truth);
  CHECK_THROWS_AS(recover_weights(p, RecoveryConfig{}), InsufficientOrders);
  RecoveryConfig bad;
  bad.pairs = {{0, 2}};
  CHECK_THROWS(bad.validate());
  bad.pairs = {{1, 5}};
  const auto p4 = make_package(8, 16, 4, 4, Activation::kSiLU, Precision::kF64, 2, &truth);
  CHECK_THROWS_AS(recover_weights(p4, bad), InsufficientOrders);
}

TEST_CASE("round-trip soundness over random f64 packages") {
  for (std::uint64_t seed = 10; seed < 16; ++seed) {
    for (Activation kind : kKinds) {
      for (int order : {2, 3, 5}) {
        MlpWeights truth;
        auto p = make_package(16, 48, 12, order, kind, Precision::kF64, seed, &truth);
        const auto rep = recover_weights(p, RecoveryConfig{}, &truth);
        const auto& err = *rep.relative_error;
        Index good = 0, eligible = 0;
        for (Index k = 0; k < err.size(); ++k) {
          if (std::fabs(truth.W.data()[k]) < 1e-6) continue;
          ++eligible;
          good += err.data()[k] < 1e-6 ? 1 : 0;
        }
        CHECK_MESSAGE(double(good) >= 0.999 * double(eligible),
                      to_string(kind) << " N=" << order << " seed " << seed);
      }
    }
  }
}

TEST_CASE("recovery is bit-identical across thread counts") {
  MlpWeights truth;
  const auto p = make_package(32, 96, 24, 4, Activation::kGeLU, Precision::kF32, 8, &truth);
  RecoveryConfig one, four;
  four.threads = 4;
  const auto a = recover_weights(p, one, &truth);
  const auto b = recover_weights(p, four, &truth);
  CHECK(a.recovered.W == b.recovered.W);
  CHECK(a.recovered.b == b.recovered.b);
  CHECK(a.recovered.c == b.recovered.c);
  CHECK(a.unrecoverable == b.unrecoverable);
  CHECK(a.coordinate_residual == b.coordinate_residual);
  CHECK(a.cost == b.cost);
}

TEST_CASE("lower storage precision never helps") {
  for (Activation kind : kKinds) {
    MlpWeights truth;
    double previous = 1.0;
    for (Precision prec : {Precision::kF64, Precision::kF32, Precision::kF16}) {
      const auto p = make_package(32, 128, 32, 4, kind, prec, 6, &truth);
      const double ratio = *recover_weights(p, RecoveryConfig{}, &truth).recovered_ratio;
      CHECK(ratio <= previous);
      previous = ratio;
    }
  }
}

TEST_CASE("relative error map and recovered ratio") {
  Rng rng(1);
  const Mat64 w = gaussian_matrix(5, 7, 1.0, rng);
  CHECK(relative_error_map(w, w).isZero(0.0));
  CHECK(recovered_ratio(relative_error_map(w, w)) == 1.0);
  const Mat64 scaled = w * 1.005;
  const Mat64 err = relative_error_map(scaled, w);
  CHECK((err.array() - 0.005).abs().maxCoeff() <= 1e-12);
  CHECK(recovered_ratio(err) == 1.0);
  MaskMat mask = MaskMat::Constant(5, 7, false);
  mask(2, 3) = true;
  CHECK(recovered_ratio(relative_error_map(w, w, &mask)) == doctest::Approx(34.0 / 35.0));
  Mat64 z = Mat64::Zero(1, 2);
  Mat64 zr(1, 2);
  zr << 0.0, 1e-3;
  const Mat64 ez = relative_error_map(zr, z);
  CHECK(ez(0, 0) == 0.0);
  CHECK(std::isinf(ez(0, 1)));
  CHECK_THROWS_AS(relative_error_map(Mat64::Zero(2, 2), Mat64::Zero(2, 3)), DimensionError);
}

TEST_CASE("log10 heat export") {
  const auto dir = std::filesystem::temp_directory_path() / "wrsec_attack_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "err.csv").string();
  Mat64 err(2, 2);
  err << 1e-4, 1e-2, 1.0, 1e-8;
  error_heat_export(err, path);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line == "row,col,log10_rel_error");
  std::vector<double> values;
  while (std::getline(f, line)) values.push_back(std::stod(line.substr(line.rfind(',') + 1)));
  REQUIRE(values.size() == 4);
  CHECK(values[0] == doctest::Approx(-4));
  CHECK(values[1] == doctest::Approx(-2));
  CHECK(values[2] == doctest::Approx(0));
  CHECK(values[3] == doctest::Approx(-8));
  CHECK_THROWS_AS(error_heat_export(err, ""), IoError);
  CHECK_THROWS(error_heat_export(Mat64(0, 0), path));
}

TEST_CASE("exported heat map reproduces the recovered ratio") {
  MlpWeights truth;
  const auto p = make_package(16, 64, 16, 3, Activation::kSiLU, Precision::kF16, 4, &truth);
  RecoveryConfig loose;
  loose.residual_threshold = 1e-2;
  const auto rep = recover_weights(p, loose, &truth);
  const auto path = (std::filesystem::temp_directory_path() / "wrsec_heat_roundtrip.csv").string();
  error_heat_export(*rep.relative_error, path);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  Index below = 0, total = 0;
  while (std::getline(f, line)) {
    const std::string v = line.substr(line.rfind(',') + 1);
    ++total;
    if (v != "inf" && std::stod(v) < -2.0) ++below;
  }
  CHECK(total == rep.relative_error->size());
  CHECK(double(below) / double(total) == *rep.recovered_ratio);
}

TEST_CASE("pair parsing") {
  CHECK(parse_pairs("1:2,2:4") == std::vector<OrderPair>{{1, 2}, {2, 4}});
  CHECK_THROWS(parse_pairs("1-2"));
  CHECK(all_pairs(4).size() == 6);
}
