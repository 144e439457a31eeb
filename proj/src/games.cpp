#include "wrsec/games.hpp"

#include <fstream>

#include <json.hpp>

namespace wrsec {

void DatasetConfig::validate() const {
  if (in_dim < 1 || hidden_dim < 1 || out_dim < 1 || tokens < 1) {
    throw std::invalid_argument("dataset dimensions and tokens must be positive");
  }
  if (!(weight_stddev > 0.0) || !(input_stddev > 0.0) || !std::isfinite(weight_stddev) ||
      !std::isfinite(input_stddev)) {
    throw std::invalid_argument("dataset standard deviations must be positive and finite");
  }
}

void GameConfig::validate() const {
  if (trials < 1) throw std::invalid_argument("trials must be at least 1");
  if (queries != 1) throw std::invalid_argument("only single-query games are implemented");
  if (max_resample < 1) throw std::invalid_argument("max_resample must be at least 1");
}

Interval wilson_interval(Index wins, Index trials, double z) {
  if (trials <= 0) return {0.0, 1.0};
  const double n = double(trials);
  const double p = double(wins) / n;
  const double z2 = z * z;
  const double centre = (p + z2 / (2 * n)) / (1 + z2 / n);
  const double half = z / (1 + z2 / n) * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n));
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

Interval distinguishing_interval(const Interval& p) {
  const double dlo = std::fabs(p.lo - 0.5), dhi = std::fabs(p.hi - 0.5);
  if (p.lo <= 0.5 && 0.5 <= p.hi) return {0.0, 2 * std::max(dlo, dhi)};
  return {2 * std::min(dlo, dhi), 2 * std::max(dlo, dhi)};
}

Rng trial_rng(std::uint64_t seed, Index trial, std::string_view stream) {
  // FNV-1a keeps stream names stable across platforms, unlike std::hash.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : stream) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  const auto t = static_cast<std::uint64_t>(trial);
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(t),
                    std::uint32_t(t >> 32), std::uint32_t(h), std::uint32_t(h >> 32)};
  return Rng(seq);
}

namespace detail {

GameOutcome summarize(std::string game, std::string scheme, std::string adversary,
                      const GameConfig& cfg, std::vector<TrialRecord> records, bool distinguishing) {
  GameOutcome o;
  o.game = std::move(game);
  o.scheme = std::move(scheme);
  o.adversary = std::move(adversary);
  o.trials = static_cast<Index>(records.size());
  o.queries = cfg.queries;
  double adv_cost = 0.0, ref_cost = 0.0;
  for (const auto& r : records) {
    o.wins += r.win ? 1 : 0;
    o.valid += r.valid ? 1 : 0;
    adv_cost += double(r.adversary_cost);
    ref_cost += double(r.reference_cost);
  }
  o.win_rate = double(o.wins) / double(o.trials);
  o.win_rate_ci = wilson_interval(o.wins, o.trials);
  if (distinguishing) {
    o.advantage = 2 * std::fabs(o.win_rate - 0.5);
    o.advantage_ci = distinguishing_interval(o.win_rate_ci);
  } else {
    o.advantage = o.win_rate;
    o.advantage_ci = o.win_rate_ci;
  }
  o.mean_adversary_cost = adv_cost / double(o.trials);
  o.mean_reference_cost = ref_cost / double(o.trials);
  o.records = std::move(records);
  return o;
}

}  // namespace detail

std::string outcome_json(const GameOutcome& o) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["game"] = o.game;
  j["scheme"] = o.scheme;
  if (!o.adversary.empty()) j["adversary"] = o.adversary;
  j["trials"] = o.trials;
  j["wins"] = o.wins;
  j["valid"] = o.valid;
  j["validity_rate"] = o.validity_rate();
  j["queries"] = o.queries;
  j["win_rate"] = o.win_rate;
  j["win_rate_ci95"] = {o.win_rate_ci.lo, o.win_rate_ci.hi};
  j["advantage"] = o.advantage;
  j["advantage_ci95"] = {o.advantage_ci.lo, o.advantage_ci.hi};
  j["mean_adversary_cost"] = o.mean_adversary_cost;
  j["mean_reference_cost"] = o.mean_reference_cost;
  nlohmann::json errors = nlohmann::json::array();
  for (std::size_t t = 0; t < o.records.size(); ++t) {
    if (!o.records[t].error.empty()) errors.push_back({{"trial", t}, {"message", o.records[t].error}});
  }
  j["adversary_errors"] = errors;
  return j.dump(2);
}

void write_outcome(const GameOutcome& o, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << outcome_json(o) << '\n';
  if (!f) throw IoError("failed writing " + path);
}

MlpWeights train_from_dataset(const DatasetConfig& data, Rng& rng) {
  return train_synthetic(data.in_dim, data.hidden_dim, data.out_dim, data.weight_stddev, rng);
}

namespace {

Scheme<TaylorPackage> taylor_like(const TaylorSchemeConfig& cfg, bool zero_theta) {
  if (cfg.order < 0 || cfg.order > kMaxOrder) throw UnsupportedOrder("taylor scheme order out of range");
  if (cfg.calib_samples < 1) throw std::invalid_argument("calibration needs at least one sample");
  if (!(cfg.calib_stddev > 0.0)) throw std::invalid_argument("calibration stddev must be positive");
  cfg.same.validate();
  Scheme<TaylorPackage> s;
  s.name = zero_theta ? "taylor-broken" : "taylor";
  s.same = cfg.same;
  s.train = [](const DatasetConfig& d, Rng& rng) { return train_from_dataset(d, rng); };
  s.run = [kind = cfg.kind](const MlpWeights& w, const Mat64& x) { return run_mlp(w, kind, x); };
  s.kgen = [](Rng&) { return KeyPair{}; };
  s.release = [cfg, zero_theta](const Key&, const MlpWeights& w, Rng& rng) {
    const Mat64 calib = gaussian_matrix(cfg.calib_samples, w.in_dim(), cfg.calib_stddev, rng);
    TaylorPackage p = release(w, calibrate_z0(w, calib), cfg.order, cfg.kind, cfg.storage);
    if (zero_theta) p.theta.setZero();
    return p;
  };
  s.run_released = [](const Key&, const TaylorPackage& p, const Mat64& x) { return run_taylor(p, x); };
  return s;
}

}  // namespace

Scheme<TaylorPackage> taylor_scheme(const TaylorSchemeConfig& cfg) { return taylor_like(cfg, false); }

Scheme<TaylorPackage> broken_taylor_scheme(const TaylorSchemeConfig& cfg) { return taylor_like(cfg, true); }

Scheme<MlpWeights> identity_scheme(Activation kind, const SameConfig& same) {
  same.validate();
  Scheme<MlpWeights> s;
  s.name = "identity";
  s.same = same;
  s.train = [](const DatasetConfig& d, Rng& rng) { return train_from_dataset(d, rng); };
  s.run = [kind](const MlpWeights& w, const Mat64& x) { return run_mlp(w, kind, x); };
  s.kgen = [](Rng&) { return KeyPair{}; };
  s.release = [](const Key&, const MlpWeights& w, Rng&) { return w; };
  s.run_released = [kind](const Key&, const MlpWeights& w, const Mat64& x) { return run_mlp(w, kind, x); };
  return s;
}

WRecAdversary<TaylorPackage> attack_adversary(const RecoveryConfig& cfg) {
  cfg.validate();
  return [cfg](const Key&, const TaylorPackage& p, Rng&) { return recover_weights(p, cfg).recovered; };
}

WRecAdversary<TaylorPackage> reinterpret_adversary() {
  return [](const Key&, const TaylorPackage& p, Rng&) {
    if (p.order < 1) throw InsufficientOrders("reinterpretation needs Theta_1");
    MlpWeights w;
    w.V = p.V;
    w.b = p.z0;
    w.W = p.coefficients(1);
    w.c = p.coefficients(0).rowwise().sum();
    cost::madds(static_cast<std::uint64_t>(p.coefficients(0).size()));
    return w;
  };
}

WRecAdversary<TaylorPackage> random_guess_adversary(double weight_stddev) {
  return [weight_stddev](const Key&, const TaylorPackage& p, Rng& rng) {
    return train_synthetic(p.in_dim(), p.hidden_dim(), p.out_dim(), weight_stddev, rng);
  };
}

EffiInfAdversary<TaylorPackage> run_released_adversary() {
  return [](const Key&, const TaylorPackage& p, const Mat64& x, Rng&) { return run_taylor(p, x); };
}

EffiInfAdversary<TaylorPackage> constant_output_adversary(double value) {
  return [value](const Key&, const TaylorPackage& p, const Mat64& x, Rng&) {
    return Mat64::Constant(x.rows(), p.out_dim(), value).eval();
  };
}

WIndAdversary<TaylorPackage> coin_flip_adversary() {
  return [](const Key&, const MlpWeights&, const MlpWeights&, const TaylorPackage&, Rng& rng) {
    return static_cast<int>(rng() & 1u);
  };
}

WIndAdversary<TaylorPackage> constant_bit_adversary(int bit) {
  return [bit](const Key&, const MlpWeights&, const MlpWeights&, const TaylorPackage&, Rng&) { return bit; };
}

}  // namespace wrsec
