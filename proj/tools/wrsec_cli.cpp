// wrsec: command-line driver for model generation, Taylor release, the
// coefficient-ratio recovery attack, security games and ratio stability scans.
//
// Exit codes: 0 ok, 1 usage, 2 I/O, 3 numeric failure.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "wrsec/attack.hpp"
#include "wrsec/container.hpp"
#include "wrsec/games.hpp"
#include "wrsec/scheme.hpp"
#include "wrsec/stability.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace wrsec;

namespace {

constexpr const char* kToolVersion = "0.1.0";

enum Exit { kOk = 0, kUsage = 1, kIo = 2, kNumeric = 3 };

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Records every option of a subcommand so the manifest carries the full
// parameter set, defaults included.
struct Params {
  std::vector<std::pair<std::string, std::function<json()>>> getters;
  std::vector<std::string> output_names;  // options naming files or directories we write

  template <typename T>
  CLI::Option* add(CLI::App* app, const std::string& name, T& var, const std::string& desc) {
    getters.emplace_back(name, [&var] { return json(var); });
    return app->add_option("--" + name, var, desc)->capture_default_str();
  }
  template <typename T>
  CLI::Option* output(CLI::App* app, const std::string& name, T& var, const std::string& desc) {
    output_names.push_back(name);
    return add(app, name, var, desc);
  }
  json collect() const {
    json j = json::object();
    for (const auto& [name, get] : getters) j[name] = get();
    return j;
  }
};

struct Manifest {
  std::string subcommand;
  json parameters;
  json seeds = json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  json notes = json::object();
};

void write_manifest(const Manifest& m, const Params& params, const std::string& path) {
  json j;
  j["schema_version"] = 1;
  j["tool"] = "wrsec";
  j["tool_version"] = kToolVersion;
  j["subcommand"] = m.subcommand;
  j["parameters"] = m.parameters;
  j["output_parameters"] = params.output_names;
  j["seeds"] = m.seeds;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  if (!m.notes.empty()) j["notes"] = m.notes;
  std::ofstream f(path);
  if (!f) throw IoError("cannot write manifest " + path);
  f << j.dump(2) << '\n';
  if (!f) throw IoError("failed writing manifest " + path);
}

std::string manifest_path_for(const std::string& output) { return output + ".manifest.json"; }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << text;
  if (!f) throw IoError("failed writing " + path);
}

Vec64 read_column_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::vector<double> values;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    std::size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    const char* first = line.data() + start;
    const char* last = line.data() + line.size();
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
      if (values.empty() && line_no == 1) continue;  // header
      throw UsageError(path + ":" + std::to_string(line_no) + ": expected one number per line");
    }
    values.push_back(v);
  }
  if (values.empty()) throw UsageError(path + ": no values");
  return Eigen::Map<const Vec64>(values.data(), static_cast<Index>(values.size()));
}

std::string column_csv(const Vec64& y) {
  std::string out;
  char buf[32];
  for (Index i = 0; i < y.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g\n", y[i]);
    out += buf;
  }
  return out;
}

std::pair<double, double> parse_interval(const std::string& text) {
  const auto colon = text.find(':', 1);
  if (colon == std::string::npos) throw UsageError("interval must look like lo:hi");
  try {
    std::size_t used = 0;
    const double lo = std::stod(text.substr(0, colon), &used);
    if (used != colon) throw UsageError("bad interval " + text);
    const std::string rest = text.substr(colon + 1);
    const double hi = std::stod(rest, &used);
    if (used != rest.size()) throw UsageError("bad interval " + text);
    if (!(lo < hi)) throw UsageError("interval needs lo < hi");
    return {lo, hi};
  } catch (const std::logic_error&) {
    throw UsageError("bad interval " + text);
  }
}

json cost_json(const CostMeter& m) {
  return {{"madds", m.madds()}, {"transcendentals", m.transcendentals()}, {"total", m.total()}};
}

void print_cost(const CostMeter& m) {
  std::cerr << "cost: madds=" << m.madds() << " transcendentals=" << m.transcendentals() << " total=" << m.total()
            << '\n';
}

// ---------------------------------------------------------------------------

struct GenArgs {
  Index in_dim = 64, hidden_dim = 256, out_dim = 64;
  double stddev = 0.02;
  std::uint64_t seed = 0;
  std::string out = "model.wrs";
};

struct ReleaseArgs {
  std::string model;
  int order = 4;
  std::string activation = "silu";
  std::string precision = "f64";
  Index calib_samples = 256;
  std::uint64_t calib_seed = 0;
  double calib_stddev = 1.0;
  std::string out = "package.wrs";
};

struct RunArgs {
  std::string model;
  std::string package;
  std::string activation = "silu";
  std::string input;
  std::string out;
};

struct AttackArgs {
  std::string package;
  std::string ground_truth;
  std::string out = "report.json";
  std::string heatmap;
  std::string recovered;
  std::string pairs;
  std::string interval = "-20:20";
  int grid_steps = 4001;
  double residual_threshold = 1e-6;
  double error_threshold = 0.01;
  unsigned threads = 1;
};

struct GameArgs {
  std::string which = "correctness";
  Index trials = 100;
  std::uint64_t seed = 0;
  std::string adversary = "attack";
  std::string out = "outcome.json";
  int order = 0;
  std::string activation = "silu";
  std::string precision = "f64";
  Index in_dim = 64, hidden_dim = 256, out_dim = 64;
  double stddev = 0.02;
  Index tokens = 0;
  Index calib_samples = 256;
  unsigned threads = 1;
};

struct StabilityArgs {
  std::string activation = "silu";
  int max_order = 5;
  std::string interval = "-10:10";
  Index steps = 2001;
  double cap = 1e6;
  std::string out_dir = "stability";
};

int cmd_gen(const GenArgs& a, const Params& params) {
  const MlpWeights w = train_synthetic(a.in_dim, a.hidden_dim, a.out_dim, a.stddev, a.seed);
  save_model(w, a.out);
  write_manifest({"gen", params.collect(), {{"seed", a.seed}}, {}, {a.out}}, params, manifest_path_for(a.out));
  std::cerr << "wrote " << a.out << " (" << w.param_count() << " parameters)\n";
  return kOk;
}

int cmd_release(const ReleaseArgs& a, const Params& params) {
  const Activation kind = parse_activation(a.activation);
  const Precision prec = parse_precision(a.precision);
  if (a.calib_samples < 1) throw UsageError("--calib-samples must be positive");
  const MlpWeights w = load_model(a.model);
  Rng rng(a.calib_seed);
  const Mat64 calib = gaussian_matrix(a.calib_samples, w.in_dim(), a.calib_stddev, rng);
  const TaylorPackage p = release(w, calibrate_z0(w, calib), a.order, kind, prec);
  save_package(p, a.out);
  write_manifest({"release", params.collect(), {{"calib_seed", a.calib_seed}}, {a.model}, {a.out}}, params,
                 manifest_path_for(a.out));
  std::cerr << "wrote " << a.out << " (order " << a.order << ", " << a.precision << ")\n";
  return kOk;
}

int cmd_run(const RunArgs& a, const Params& params, bool taylor) {
  const Vec64 x = read_column_csv(a.input);
  Vec64 y;
  MeterScope scope;
  if (taylor) {
    y = run_taylor(load_package(a.package), x);
  } else {
    const MlpWeights w = load_model(a.model);
    y = run_mlp(w, parse_activation(a.activation), x);
  }
  std::cout << column_csv(y);
  print_cost(scope.meter());
  Manifest m{taylor ? "taylor-run" : "run", params.collect(), json::object(), {taylor ? a.package : a.model, a.input},
             {}};
  m.notes["cost"] = cost_json(scope.meter());
  std::string manifest = a.input + "." + m.subcommand + ".manifest.json";
  if (!a.out.empty()) {
    write_text(a.out, column_csv(y));
    m.outputs.push_back(a.out);
    manifest = manifest_path_for(a.out);
  }
  write_manifest(m, params, manifest);
  return kOk;
}

int cmd_attack(const AttackArgs& a, const Params& params) {
  RecoveryConfig cfg;
  if (!a.pairs.empty()) cfg.pairs = parse_pairs(a.pairs);
  std::tie(cfg.interval_lo, cfg.interval_hi) = parse_interval(a.interval);
  cfg.grid_points = a.grid_steps;
  cfg.residual_threshold = a.residual_threshold;
  cfg.threads = a.threads;
  cfg.validate();
  if (!a.heatmap.empty() && a.ground_truth.empty()) throw UsageError("--heatmap needs --ground-truth");
  if (!(a.error_threshold > 0.0)) throw UsageError("--error-threshold must be positive");

  const TaylorPackage p = load_package(a.package);
  std::optional<MlpWeights> truth;
  if (!a.ground_truth.empty()) truth = load_model(a.ground_truth);
  const RecoveryReport rep = recover_weights(p, cfg, truth ? &*truth : nullptr);

  Index unrecoverable_coords = 0;
  for (auto s : rep.coordinate_status) unrecoverable_coords += s == CoordinateStatus::kUnrecoverable ? 1 : 0;
  json r;
  r["schema_version"] = 1;
  r["activation"] = to_string(p.kind);
  r["order"] = p.order;
  r["storage"] = to_string(p.storage);
  r["shape"] = {{"in", p.in_dim()}, {"hidden", p.hidden_dim()}, {"out", p.out_dim()}};
  json pairs = json::array();
  for (const auto& pr : cfg.resolved_pairs(p.order)) pairs.push_back(std::to_string(pr.a) + ":" + std::to_string(pr.b));
  r["pairs"] = pairs;
  r["residual_threshold"] = cfg.residual_threshold;
  r["coordinates"] = p.hidden_dim();
  r["unrecoverable_coordinates"] = unrecoverable_coords;
  r["unrecoverable_elements"] = rep.unrecoverable.count();
  if (rep.relative_error) {
    r["error_threshold"] = a.error_threshold;
    r["recovered_ratio"] = recovered_ratio(*rep.relative_error, a.error_threshold);
  } else {
    r["recovered_ratio"] = nullptr;
  }
  r["cost"] = cost_json(rep.cost);
  write_text(a.out, r.dump(2) + "\n");

  Manifest m{"attack", params.collect(), json::object(), {a.package}, {a.out}};
  if (truth) m.inputs.push_back(a.ground_truth);
  if (!a.heatmap.empty()) {
    error_heat_export(*rep.relative_error, a.heatmap);
    m.outputs.push_back(a.heatmap);
  }
  if (!a.recovered.empty()) {
    save_model(rep.recovered, a.recovered);
    m.outputs.push_back(a.recovered);
  }
  m.notes["runtime_seconds"] = rep.runtime_seconds;
  m.notes["runtime_note"] = "wall-clock, machine-dependent";
  write_manifest(m, params, manifest_path_for(a.out));

  std::cerr << "recovered " << (p.hidden_dim() - unrecoverable_coords) << "/" << p.hidden_dim() << " coordinates";
  if (rep.relative_error) std::cerr << ", recovered_ratio " << r["recovered_ratio"].get<double>();
  std::cerr << ", wall-clock " << rep.runtime_seconds << " s (machine-dependent)\n";
  print_cost(rep.cost);
  return kOk;
}

int cmd_game(const GameArgs& a, const Params& params) {
  const Activation kind = parse_activation(a.activation);
  const Precision prec = parse_precision(a.precision);
  TaylorSchemeConfig tc;
  tc.order = a.order > 0 ? a.order : (a.which == "correctness" ? 8 : 4);
  tc.kind = kind;
  tc.storage = prec;
  tc.calib_samples = a.calib_samples;
  const auto scheme = taylor_scheme(tc);

  DatasetConfig data;
  data.in_dim = a.in_dim;
  data.hidden_dim = a.hidden_dim;
  data.out_dim = a.out_dim;
  data.weight_stddev = a.stddev;
  data.tokens = a.tokens > 0 ? a.tokens : (a.which == "effiinf" ? 256 : 1);

  GameConfig g;
  g.trials = a.trials;
  g.seed = a.seed;
  g.threads = a.threads;

  const auto attack = attack_adversary();
  GameOutcome o;
  if (a.which == "correctness") {
    o = game_correctness(scheme, data, g);
  } else if (a.which == "wrec") {
    const auto adv = a.adversary == "attack"    ? attack
                     : a.adversary == "trivial" ? reinterpret_adversary()
                                                : random_guess_adversary(a.stddev);
    o = game_wrec(scheme, adv, a.adversary, data, g);
  } else if (a.which == "effiinf") {
    const auto adv = a.adversary == "attack"    ? reduce_wrec_to_effiinf(attack, scheme)
                     : a.adversary == "trivial" ? run_released_adversary()
                                                : constant_output_adversary();
    o = game_effiinf(scheme, adv, a.adversary, data, g);
  } else {
    const auto adv = a.adversary == "attack"    ? reduce_wrec_to_wind(attack, scheme)
                     : a.adversary == "trivial" ? constant_bit_adversary(0)
                                                : coin_flip_adversary();
    o = game_wind(scheme, adv, a.adversary, data, g);
  }
  write_outcome(o, a.out);
  Manifest m{"game", params.collect(), {{"seed", a.seed}}, {}, {a.out}};
  m.notes["resolved"] = {{"order", tc.order}, {"tokens", data.tokens}};
  write_manifest(m, params, manifest_path_for(a.out));
  std::cerr << o.game << ": " << o.wins << "/" << o.trials << " wins, advantage " << o.advantage << " [" << o.advantage_ci.lo
            << ", " << o.advantage_ci.hi << "]";
  if (o.game == "effiinf") std::cerr << ", validity " << o.validity_rate();
  std::cerr << '\n';
  return kOk;
}

int cmd_stability(const StabilityArgs& a, const Params& params) {
  StabilityConfig cfg;
  std::tie(cfg.lo, cfg.hi) = parse_interval(a.interval);
  cfg.steps = a.steps;
  cfg.cap = a.cap;
  const Activation kind = parse_activation(a.activation);
  const StabilitySummary s = stability_report(kind, a.max_order, cfg, a.out_dir);
  Manifest m{"stability", params.collect(), json::object(), {}, {}};
  for (const auto& p : s.pairs) m.outputs.push_back((fs::path(a.out_dir) / p.csv).string());
  m.outputs.push_back((fs::path(a.out_dir) / (to_string(kind) + "_summary.json")).string());
  write_manifest(m, params, (fs::path(a.out_dir) / (to_string(kind) + "_stability.manifest.json")).string());
  Index flagged = 0;
  for (const auto& p : s.pairs) flagged += p.flagged;
  std::cerr << "wrote " << s.pairs.size() << " ratio grids to " << a.out_dir << ", " << flagged << " flagged samples\n";
  return kOk;
}

struct Cli {
  CLI::App app{"Taylor-release weight recovery toolkit"};
  GenArgs gen;
  ReleaseArgs rel;
  RunArgs run;
  RunArgs trun;
  AttackArgs attack;
  GameArgs game;
  StabilityArgs stab;
  std::string replay_manifest;
  std::string replay_out_dir;
  std::map<std::string, Params> params;
  std::map<std::string, CLI::App*> subs;

  Cli() {
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    auto* s = sub("gen", "sample a synthetic two-layer MLP");
    auto& p = params["gen"];
    p.add(s, "in-dim", gen.in_dim, "input width")->check(CLI::PositiveNumber);
    p.add(s, "hidden-dim", gen.hidden_dim, "hidden width")->check(CLI::PositiveNumber);
    p.add(s, "out-dim", gen.out_dim, "output width")->check(CLI::PositiveNumber);
    p.add(s, "stddev", gen.stddev, "weight standard deviation")->check(CLI::PositiveNumber);
    p.add(s, "seed", gen.seed, "sampling seed");
    p.output(s, "out", gen.out, "model container");

    s = sub("release", "publish Taylor coefficients of the second layer");
    auto& r = params["release"];
    r.add(s, "model", rel.model, "model container")->required();
    r.add(s, "order", rel.order, "Taylor order N");
    r.add(s, "activation", rel.activation, "silu|gelu")->check(CLI::IsMember({"silu", "gelu"}));
    r.add(s, "precision", rel.precision, "f64|f32|f16")->check(CLI::IsMember({"f64", "f32", "f16"}));
    r.add(s, "calib-samples", rel.calib_samples, "calibration inputs K");
    r.add(s, "calib-seed", rel.calib_seed, "calibration seed");
    r.add(s, "calib-stddev", rel.calib_stddev, "calibration input standard deviation")->check(CLI::PositiveNumber);
    r.output(s, "out", rel.out, "package container");

    s = sub("run", "evaluate the original MLP on one input");
    auto& q = params["run"];
    q.add(s, "model", run.model, "model container")->required();
    q.add(s, "activation", run.activation, "silu|gelu")->check(CLI::IsMember({"silu", "gelu"}));
    q.add(s, "input", run.input, "single-column CSV")->required();
    q.output(s, "out", run.out, "optional single-column CSV of outputs");

    s = sub("taylor-run", "evaluate a released package on one input");
    auto& t = params["taylor-run"];
    t.add(s, "package", trun.package, "package container")->required();
    t.add(s, "input", trun.input, "single-column CSV")->required();
    t.output(s, "out", trun.out, "optional single-column CSV of outputs");

    s = sub("attack", "recover weights from a released package");
    auto& k = params["attack"];
    k.add(s, "package", attack.package, "package container")->required();
    k.add(s, "ground-truth", attack.ground_truth, "model container to score against");
    k.output(s, "out", attack.out, "report JSON");
    k.output(s, "heatmap", attack.heatmap, "per-element log10 relative error CSV (needs --ground-truth)");
    k.output(s, "recovered", attack.recovered, "write the recovered model container");
    k.add(s, "pairs", attack.pairs, "derivative order pairs a:b,... (default: all)");
    k.add(s, "interval", attack.interval, "root search interval lo:hi");
    k.add(s, "grid-steps", attack.grid_steps, "bracketing grid points");
    k.add(s, "residual-threshold", attack.residual_threshold, "per-coordinate consistency threshold");
    k.add(s, "error-threshold", attack.error_threshold, "relative error counted as recovered");
    k.add(s, "threads", attack.threads, "worker threads");

    s = sub("game", "run a security game against the Taylor release");
    auto& g = params["game"];
    g.add(s, "which", game.which, "correctness|wrec|effiinf|wind")
        ->check(CLI::IsMember({"correctness", "wrec", "effiinf", "wind"}));
    g.add(s, "trials", game.trials, "trials")->check(CLI::PositiveNumber);
    g.add(s, "seed", game.seed, "game seed");
    g.add(s, "adversary", game.adversary, "attack|trivial|random")->check(CLI::IsMember({"attack", "trivial", "random"}));
    g.output(s, "out", game.out, "outcome JSON");
    g.add(s, "order", game.order, "Taylor order (0: 8 for correctness, else 4)");
    g.add(s, "activation", game.activation, "silu|gelu")->check(CLI::IsMember({"silu", "gelu"}));
    g.add(s, "precision", game.precision, "f64|f32|f16")->check(CLI::IsMember({"f64", "f32", "f16"}));
    g.add(s, "in-dim", game.in_dim, "input width")->check(CLI::PositiveNumber);
    g.add(s, "hidden-dim", game.hidden_dim, "hidden width")->check(CLI::PositiveNumber);
    g.add(s, "out-dim", game.out_dim, "output width")->check(CLI::PositiveNumber);
    g.add(s, "stddev", game.stddev, "weight standard deviation")->check(CLI::PositiveNumber);
    g.add(s, "tokens", game.tokens, "rows per input (0: 256 for effiinf, else 1)");
    g.add(s, "calib-samples", game.calib_samples, "calibration inputs per release");
    g.add(s, "threads", game.threads, "worker threads");

    s = sub("stability", "scan derivative ratios for instability");
    auto& b = params["stability"];
    b.add(s, "activation", stab.activation, "silu|gelu")->check(CLI::IsMember({"silu", "gelu"}));
    b.add(s, "max-order", stab.max_order, "largest derivative order");
    b.add(s, "interval", stab.interval, "lo:hi");
    b.add(s, "steps", stab.steps, "grid points");
    b.add(s, "cap", stab.cap, "extreme-value cap");
    b.output(s, "out-dir", stab.out_dir, "output directory");

    s = app.add_subcommand("replay", "re-run a command from its manifest");
    s->add_option("--manifest", replay_manifest, "manifest JSON")->required();
    s->add_option("--out-dir", replay_out_dir, "write outputs here instead of the original paths");
  }

  CLI::App* sub(const std::string& name, const std::string& desc) { return subs[name] = app.add_subcommand(name, desc); }

  int dispatch() {
    if (subs["gen"]->parsed()) return cmd_gen(gen, params["gen"]);
    if (subs["release"]->parsed()) return cmd_release(rel, params["release"]);
    if (subs["run"]->parsed()) return cmd_run(run, params["run"], false);
    if (subs["taylor-run"]->parsed()) return cmd_run(trun, params["taylor-run"], true);
    if (subs["attack"]->parsed()) return cmd_attack(attack, params["attack"]);
    if (subs["game"]->parsed()) return cmd_game(game, params["game"]);
    if (subs["stability"]->parsed()) return cmd_stability(stab, params["stability"]);
    return replay();
  }

  int replay();
};

int run_cli(std::vector<std::string> args);

int Cli::replay() {
  std::ifstream f(replay_manifest);
  if (!f) throw IoError("cannot open " + replay_manifest);
  const json m = json::parse(f, nullptr, false);
  if (m.is_discarded() || !m.is_object() || !m.contains("subcommand") || !m.contains("parameters")) {
    throw UsageError(replay_manifest + " is not a manifest");
  }
  const auto sub = m["subcommand"].get<std::string>();
  if (sub == "replay" || !subs.count(sub)) throw UsageError("cannot replay subcommand '" + sub + "'");
  std::vector<std::string> outputs;
  if (m.contains("output_parameters")) outputs = m["output_parameters"].get<std::vector<std::string>>();
  std::vector<std::string> args{"wrsec", sub};
  for (const auto& [name, value] : m["parameters"].items()) {
    std::string text = value.is_string() ? value.get<std::string>() : value.dump();
    if (text.empty()) continue;
    if (!replay_out_dir.empty() && std::find(outputs.begin(), outputs.end(), name) != outputs.end()) {
      std::error_code ec;
      fs::create_directories(replay_out_dir, ec);
      text = (fs::path(replay_out_dir) / fs::path(text).filename()).string();
    }
    args.push_back("--" + name + "=" + text);
  }
  return run_cli(args);
}

int run_cli(std::vector<std::string> args) {
  Cli cli;
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  try {
    cli.app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = cli.app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  try {
    return cli.dispatch();
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::out_of_range& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return kNumeric;
  }
}

}  // namespace

int main(int argc, char** argv) { return run_cli({argv, argv + argc}); }
