#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "wrsec/attack.hpp"
#include "wrsec/core.hpp"
#include "wrsec/scheme.hpp"

namespace wrsec {

/// Stand-in for the training data distribution. Train is abstracted, so a
/// dataset is just the shape of the model it yields plus the input law.
struct DatasetConfig {
  Index in_dim = 64;
  Index hidden_dim = 256;
  Index out_dim = 64;
  double weight_stddev = 0.02;
  double input_stddev = 1.0;
  /// Rows per sampled input x. A prompt of T tokens costs T forward passes.
  Index tokens = 1;

  void validate() const;
};

using Key = std::vector<std::uint8_t>;
struct KeyPair {
  Key sk;
  Key pk;
};

/// (Train, Run, KGen, Release, Run') with the Same configuration used to judge
/// both weights and outputs. Every slot may be called concurrently.
template <typename Released>
struct Scheme {
  std::string name;
  std::function<MlpWeights(const DatasetConfig&, Rng&)> train;
  std::function<Mat64(const MlpWeights&, const Mat64&)> run;
  std::function<KeyPair(Rng&)> kgen;
  std::function<Released(const Key& sk, const MlpWeights&, Rng&)> release;
  std::function<Mat64(const Key& pk, const Released&, const Mat64&)> run_released;
  SameConfig same;
};

template <typename Released>
using WRecAdversary = std::function<MlpWeights(const Key& pk, const Released&, Rng&)>;
template <typename Released>
using EffiInfAdversary = std::function<Mat64(const Key& pk, const Released&, const Mat64& x, Rng&)>;
template <typename Released>
using WIndAdversary = std::function<int(const Key& pk, const MlpWeights& w0, const MlpWeights& w1,
                                        const Released&, Rng&)>;

struct GameConfig {
  Index trials = 100;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  /// Oracle queries per trial. Only single-query games are implemented; the
  /// field is carried through to the outcome so multi-query variants can slot in.
  Index queries = 1;
  /// W-IND draws W1 until it is not Same as W0.
  int max_resample = 16;

  void validate() const;
};

struct TrialRecord {
  bool win = false;
  bool valid = true;
  std::uint64_t adversary_cost = 0;
  std::uint64_t reference_cost = 0;  // Run' cost where the game measures it
  int bit = -1;                      // W-IND challenge bit
  std::string error;
};

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
};

struct GameOutcome {
  std::string game;
  std::string scheme;
  std::string adversary;
  Index trials = 0;
  Index wins = 0;
  Index valid = 0;
  Index queries = 1;
  double win_rate = 0.0;
  Interval win_rate_ci;
  double advantage = 0.0;
  Interval advantage_ci;
  double mean_adversary_cost = 0.0;
  double mean_reference_cost = 0.0;
  std::vector<TrialRecord> records;

  double validity_rate() const { return trials ? double(valid) / double(trials) : 0.0; }
};

/// Raised when a scheme slot fails; carries the trial it failed in.
struct GameError : std::runtime_error {
  GameError(Index trial, const std::string& what)
      : std::runtime_error("trial " + std::to_string(trial) + ": " + what), trial(trial) {}
  Index trial;
};

/// Wilson score interval at 95% confidence.
Interval wilson_interval(Index wins, Index trials, double z = 1.959963984540054);
/// Maps an interval on Pr[win] to one on 2|p - 1/2|.
Interval distinguishing_interval(const Interval& p);

/// Independent generator for (seed, trial, stream). Games that share a seed
/// see the same W, keys, release randomness and adversary coins per trial.
Rng trial_rng(std::uint64_t seed, Index trial, std::string_view stream);

std::string outcome_json(const GameOutcome& outcome);
void write_outcome(const GameOutcome& outcome, const std::string& path);

namespace detail {

template <typename Fn>
std::vector<TrialRecord> run_trials(const GameConfig& cfg, Fn&& trial) {
  cfg.validate();
  std::vector<TrialRecord> records(static_cast<std::size_t>(cfg.trials));
  const unsigned threads = std::max(1u, std::min<unsigned>(cfg.threads, unsigned(cfg.trials)));
  if (threads == 1) {
    for (Index t = 0; t < cfg.trials; ++t) records[t] = trial(t);
    return records;
  }
  std::vector<std::exception_ptr> failures(threads);
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (Index t = w; t < cfg.trials; t += threads) records[t] = trial(t);
        } catch (...) {
          failures[w] = std::current_exception();
        }
      });
    }
  }
  // Report the failure with the lowest trial index, as a serial run would.
  std::exception_ptr first;
  Index first_trial = cfg.trials;
  for (auto& f : failures) {
    if (!f) continue;
    try {
      std::rethrow_exception(f);
    } catch (const GameError& e) {
      if (e.trial < first_trial) {
        first_trial = e.trial;
        first = f;
      }
    } catch (...) {
      if (!first) first = f;
    }
  }
  if (first) std::rethrow_exception(first);
  return records;
}

GameOutcome summarize(std::string game, std::string scheme, std::string adversary,
                      const GameConfig& cfg, std::vector<TrialRecord> records, bool distinguishing);

template <typename Fn>
auto guarded(Index trial, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const GameError&) {
    throw;
  } catch (const std::exception& e) {
    throw GameError(trial, e.what());
  }
}

inline Mat64 sample_input(const DatasetConfig& d, Rng& rng) {
  return gaussian_matrix(d.tokens, d.in_dim, d.input_stddev, rng);
}

}  // namespace detail

template <typename R>
GameOutcome game_correctness(const Scheme<R>& scheme, const DatasetConfig& data, const GameConfig& cfg) {
  data.validate();
  auto records = detail::run_trials(cfg, [&](Index t) {
    return detail::guarded(t, [&] {
      Rng train_rng = trial_rng(cfg.seed, t, "train");
      Rng key_rng = trial_rng(cfg.seed, t, "kgen");
      Rng release_rng = trial_rng(cfg.seed, t, "release");
      Rng input_rng = trial_rng(cfg.seed, t, "input");
      const KeyPair keys = scheme.kgen(key_rng);
      const MlpWeights w = scheme.train(data, train_rng);
      const R released = scheme.release(keys.sk, w, release_rng);
      const Mat64 x = detail::sample_input(data, input_rng);
      const Mat64 y = scheme.run(w, x);
      MeterScope reference;
      const Mat64 y_released = scheme.run_released(keys.pk, released, x);
      TrialRecord rec;
      rec.reference_cost = reference.meter().total();
      rec.win = same_outputs(y, y_released, scheme.same);
      return rec;
    });
  });
  return detail::summarize("correctness", scheme.name, "", cfg, std::move(records), false);
}

template <typename R>
GameOutcome game_wrec(const Scheme<R>& scheme, const WRecAdversary<R>& adversary,
                      const std::string& adversary_name, const DatasetConfig& data, const GameConfig& cfg) {
  data.validate();
  auto records = detail::run_trials(cfg, [&](Index t) {
    Rng train_rng = trial_rng(cfg.seed, t, "train");
    Rng key_rng = trial_rng(cfg.seed, t, "kgen");
    Rng release_rng = trial_rng(cfg.seed, t, "release");
    Rng adv_rng = trial_rng(cfg.seed, t, "adversary");
    MlpWeights w;
    KeyPair keys;
    R released;
    detail::guarded(t, [&] {
      w = scheme.train(data, train_rng);
      keys = scheme.kgen(key_rng);
      released = scheme.release(keys.sk, w, release_rng);
    });
    TrialRecord rec;
    MeterScope scope;
    try {
      const MlpWeights guess = adversary(keys.pk, released, adv_rng);
      rec.win = same_weights(guess, w, scheme.same);
    } catch (const std::exception& e) {
      rec.win = false;
      rec.error = e.what();
    }
    rec.adversary_cost = scope.meter().total();
    return rec;
  });
  return detail::summarize("wrec", scheme.name, adversary_name, cfg, std::move(records), false);
}

/// A trial is valid only if the adversary's measured cost is strictly below
/// the measured cost of Run' on the same input.
template <typename R>
GameOutcome game_effiinf(const Scheme<R>& scheme, const EffiInfAdversary<R>& adversary,
                         const std::string& adversary_name, const DatasetConfig& data,
                         const GameConfig& cfg) {
  data.validate();
  auto records = detail::run_trials(cfg, [&](Index t) {
    Rng train_rng = trial_rng(cfg.seed, t, "train");
    Rng key_rng = trial_rng(cfg.seed, t, "kgen");
    Rng release_rng = trial_rng(cfg.seed, t, "release");
    Rng input_rng = trial_rng(cfg.seed, t, "input");
    Rng adv_rng = trial_rng(cfg.seed, t, "adversary");
    MlpWeights w;
    KeyPair keys;
    R released;
    Mat64 x, y_released;
    TrialRecord rec;
    detail::guarded(t, [&] {
      w = scheme.train(data, train_rng);
      keys = scheme.kgen(key_rng);
      released = scheme.release(keys.sk, w, release_rng);
      x = detail::sample_input(data, input_rng);
      MeterScope reference;
      y_released = scheme.run_released(keys.pk, released, x);
      rec.reference_cost = reference.meter().total();
    });
    MeterScope scope;
    bool same = false;
    try {
      const Mat64 guess = adversary(keys.pk, released, x, adv_rng);
      same = guess.rows() == y_released.rows() && guess.cols() == y_released.cols() &&
             same_outputs(guess, y_released, scheme.same);
    } catch (const std::exception& e) {
      rec.error = e.what();
    }
    rec.adversary_cost = scope.meter().total();
    rec.valid = rec.adversary_cost < rec.reference_cost;
    rec.win = rec.valid && same;
    return rec;
  });
  return detail::summarize("effiinf", scheme.name, adversary_name, cfg, std::move(records), false);
}

/// W_b is the trial's Train sample (the same W the other games see for that
/// seed); W_{1-b} comes from an independent stream, redrawn while Same as W_b.
template <typename R>
GameOutcome game_wind(const Scheme<R>& scheme, const WIndAdversary<R>& adversary,
                      const std::string& adversary_name, const DatasetConfig& data, const GameConfig& cfg) {
  data.validate();
  auto records = detail::run_trials(cfg, [&](Index t) {
    Rng train_rng = trial_rng(cfg.seed, t, "train");
    Rng alt_rng = trial_rng(cfg.seed, t, "train-alt");
    Rng key_rng = trial_rng(cfg.seed, t, "kgen");
    Rng release_rng = trial_rng(cfg.seed, t, "release");
    Rng bit_rng = trial_rng(cfg.seed, t, "bit");
    Rng adv_rng = trial_rng(cfg.seed, t, "adversary");
    TrialRecord rec;
    rec.bit = static_cast<int>(bit_rng() & 1u);
    MlpWeights w[2];
    KeyPair keys;
    R released;
    detail::guarded(t, [&] {
      w[rec.bit] = scheme.train(data, train_rng);
      int attempt = 0;
      do {
        if (attempt++ == cfg.max_resample) {
          throw GameError(t, "could not sample weights that are not Same within " +
                                 std::to_string(cfg.max_resample) + " draws");
        }
        w[1 - rec.bit] = scheme.train(data, alt_rng);
      } while (same_weights(w[0], w[1], scheme.same));
      keys = scheme.kgen(key_rng);
      released = scheme.release(keys.sk, w[rec.bit], release_rng);
    });
    MeterScope scope;
    try {
      rec.win = adversary(keys.pk, w[0], w[1], released, adv_rng) == rec.bit;
    } catch (const std::exception& e) {
      rec.error = e.what();
    }
    rec.adversary_cost = scope.meter().total();
    return rec;
  });
  return detail::summarize("wind", scheme.name, adversary_name, cfg, std::move(records), true);
}

/// B(pk, W', x) = Run(A(pk, W'), x). B runs inside the game's meter, so its
/// cost is A's cost plus Run's cost by construction.
template <typename R>
EffiInfAdversary<R> reduce_wrec_to_effiinf(WRecAdversary<R> a, const Scheme<R>& scheme) {
  return [a = std::move(a), run = scheme.run](const Key& pk, const R& released, const Mat64& x, Rng& rng) {
    return run(a(pk, released, rng), x);
  };
}

/// B(pk, W0, W1, W') = 0 if Same(A(pk, W'), W0) else 1.
template <typename R>
WIndAdversary<R> reduce_wrec_to_wind(WRecAdversary<R> a, const Scheme<R>& scheme) {
  return [a = std::move(a), same = scheme.same](const Key& pk, const MlpWeights& w0, const MlpWeights&,
                                                const R& released, Rng& rng) {
    return same_weights(a(pk, released, rng), w0, same) ? 0 : 1;
  };
}

// TaylorMLP instance and its adversaries.

struct TaylorSchemeConfig {
  int order = 4;
  Activation kind = Activation::kSiLU;
  Precision storage = Precision::kF64;
  Index calib_samples = 256;
  /// Calibration inputs are N(0, calib_stddev^2); keep equal to the dataset's input law.
  double calib_stddev = 1.0;
  SameConfig same;
};

/// KGen returns empty keys; Release calibrates z0 on fresh inputs from the
/// dataset's input law and publishes the Taylor package.
Scheme<TaylorPackage> taylor_scheme(const TaylorSchemeConfig& cfg);
/// Release publishes W unchanged and Run' = Run.
Scheme<MlpWeights> identity_scheme(Activation kind, const SameConfig& same = {});
/// Like taylor_scheme but Release zeroes every coefficient.
Scheme<TaylorPackage> broken_taylor_scheme(const TaylorSchemeConfig& cfg);

MlpWeights train_from_dataset(const DatasetConfig& data, Rng& rng);

WRecAdversary<TaylorPackage> attack_adversary(const RecoveryConfig& cfg = {});
/// Reads Theta_1 as W, z0 as b and the row sums of Theta_0 as c.
WRecAdversary<TaylorPackage> reinterpret_adversary();
/// Guesses a fresh sample with the package's shapes.
WRecAdversary<TaylorPackage> random_guess_adversary(double weight_stddev = 0.02);

/// Evaluates the released package itself.
EffiInfAdversary<TaylorPackage> run_released_adversary();
EffiInfAdversary<TaylorPackage> constant_output_adversary(double value = 0.0);

WIndAdversary<TaylorPackage> coin_flip_adversary();
WIndAdversary<TaylorPackage> constant_bit_adversary(int bit = 0);

}  // namespace wrsec
