// Command-line front end: single-shot synthesis on particle files, the
// benchmark scenarios, the sensor-count sweep, and multi-step filter runs.
// Every command is deterministic given --seed and rewrites its outputs
// byte-identically.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lisyn/errors.hpp"
#include "lisyn/filter.hpp"
#include "lisyn/io.hpp"
#include "lisyn/scenarios.hpp"
#include "lisyn/sensor_design.hpp"
#include "lisyn/synthesis.hpp"

namespace {

using namespace lisyn;

struct CommonArgs {
  std::string config_path;
  std::string out_dir = ".";
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON config file");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--set", args.overrides, "config override key.path=value (repeatable)");
  cmd->add_option("--seed", args.seed, "master seed (overrides config)")
      ->each([&args](const std::string&) { args.seed_given = true; });
}

// ---------------------------------------------------------------------------
// Config plumbing
// ---------------------------------------------------------------------------

json parse_override_value(const std::string& text) {
  const json parsed = json::parse(text, nullptr, false);
  if (parsed.is_discarded()) return json(text);  // bare string
  return parsed;
}

void apply_override(json& cfg, const std::string& spec) {
  const std::size_t eq = spec.find('=');
  if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + spec);
  const std::string key = spec.substr(0, eq);
  const json value = parse_override_value(spec.substr(eq + 1));
  json* node = &cfg;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (part.empty()) throw ConfigError("--set key has an empty path segment: " + key);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

// Overlays user settings on the defaults; any key absent from the defaults
// at the same level is unknown and rejected.
void merge_into(json& resolved, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config must be a JSON object at " + path);
  for (const auto& item : user.items()) {
    const std::string here = path.empty() ? item.key() : path + "." + item.key();
    if (!resolved.contains(item.key())) throw ConfigError("unknown config field: " + here);
    if (resolved[item.key()].is_object() && item.value().is_object())
      merge_into(resolved[item.key()], item.value(), here);
    else
      resolved[item.key()] = item.value();
  }
}

json resolve_config(const json& defaults, const CommonArgs& args) {
  json user = json::object();
  if (!args.config_path.empty()) user = read_json_file(args.config_path);
  for (const std::string& spec : args.overrides) apply_override(user, spec);
  json resolved = defaults;
  merge_into(resolved, user, "");
  if (args.seed_given) resolved["seed"] = args.seed;
  return resolved;
}

void require_keys(const json& obj, const std::vector<std::string>& allowed,
                  const std::string& what) {
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const std::string& k : allowed)
      if (item.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError("unknown " + what + " field: " + item.key());
  }
}

Vector vector_from(const json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i)
    v[i] = j.at(static_cast<std::size_t>(i)).get<double>();
  return v;
}

// ---------------------------------------------------------------------------
// Metric specs from JSON
// ---------------------------------------------------------------------------

DiscrepancySpec parse_metric(const json& m, bool allow_hybrid,
                             const std::vector<std::string>& extra_keys) {
  const std::string kind = m.value("kind", "wasserstein");
  auto allowed = extra_keys;
  allowed.push_back("kind");
  if (kind == "wasserstein") {
    allowed.insert(allowed.end(), {"p", "eta_rel", "eta_abs"});
    require_keys(m, allowed, "wasserstein metric");
    SinkhornOptions opt;
    opt.eta_rel = m.value("eta_rel", opt.eta_rel);
    if (m.contains("eta_abs") && !m["eta_abs"].is_null())
      opt.eta_abs = m["eta_abs"].get<double>();
    return DiscrepancySpec::wasserstein(m.value("p", 2.0), opt);
  }
  if (kind == "mmd") {
    allowed.push_back("sigma");
    require_keys(m, allowed, "mmd metric");
    return DiscrepancySpec::mmd_kernel(KernelSpec{m.value("sigma", 1.0)});
  }
  if (kind == "chi2") {
    allowed.push_back("sigma");
    require_keys(m, allowed, "chi2 metric");
    const double sigma = m.value("sigma", 0.0);
    return DiscrepancySpec::chi_squared_smoothed(
        sigma > 0.0 ? std::optional<double>(sigma) : std::nullopt);
  }
  if (kind == "moments") {
    allowed.insert(allowed.end(), {"features", "norm", "scales"});
    require_keys(m, allowed, "moment metric");
    FeatureMap features;
    const std::string f = m.value("features", "mean_m2");
    if (f == "mean")
      features.kind = FeatureMap::Kind::Mean;
    else if (f == "mean_m2")
      features.kind = FeatureMap::Kind::MeanSecondMoment;
    else
      throw ConfigError("unknown feature set: " + f);
    MomentNorm norm;
    const std::string n = m.value("norm", "l2");
    if (n == "l2") {
      norm.kind = MomentNorm::Kind::L2;
    } else if (n == "per_component") {
      norm.kind = MomentNorm::Kind::PerComponent;
      if (!m.contains("scales")) throw ConfigError("per_component norm needs scales");
      norm.scales = vector_from(m["scales"]);
    } else {
      throw ConfigError("unknown moment norm: " + n);
    }
    return DiscrepancySpec::moments(features, norm);
  }
  if (kind == "hybrid") {
    if (!allow_hybrid) throw ConfigError("hybrid metrics cannot nest");
    allowed.push_back("parts");
    require_keys(m, allowed, "hybrid metric");
    if (!m.contains("parts") || !m["parts"].is_array() || m["parts"].empty())
      throw ConfigError("hybrid metric needs a nonempty parts array");
    std::vector<HybridComponent> parts;
    for (const json& pj : m["parts"]) {
      const DiscrepancySpec leaf = parse_metric(pj, false, {"weight"});
      HybridComponent part;
      part.weight = pj.value("weight", 1.0);
      std::visit(
          [&part](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (!std::is_same_v<T, HybridSpec>) part.metric = v;
          },
          leaf.variant());
      parts.push_back(std::move(part));
    }
    return DiscrepancySpec::hybrid(std::move(parts));
  }
  throw ConfigError("unknown metric kind: " + kind);
}

// ---------------------------------------------------------------------------
// Plot curves
// ---------------------------------------------------------------------------

Vector curve_grid(const ParticleSet& prior, const ParticleSet& target) {
  Vector pooled(prior.size() + target.size());
  pooled << prior.points.col(0), target.points.col(0);
  const double lo = pooled.minCoeff();
  const double hi = pooled.maxCoeff();
  const double mean = pooled.mean();
  double sd = std::sqrt((pooled.array() - mean).square().sum() /
                        static_cast<double>(pooled.size()));
  if (!(sd > 0.0)) sd = 1.0;
  Vector grid(512);
  const double a = lo - 3.0 * sd;
  const double b = hi + 3.0 * sd;
  for (int i = 0; i < 512; ++i) grid[i] = a + (b - a) * i / 511.0;
  return grid;
}

Vector kde_curve(const Vector& grid, const PointMatrix& pts, const Vector& w, double h) {
  Vector out(grid.size());
  const double norm = 1.0 / (h * std::sqrt(2.0 * M_PI));
  for (Eigen::Index g = 0; g < grid.size(); ++g) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      const double z = (grid[g] - pts(i, 0)) / h;
      acc += w[i] * std::exp(-0.5 * z * z);
    }
    out[g] = acc * norm;
  }
  return out;
}

// Kernel-weighted interpolation of per-particle values onto the grid; a
// plotting aid only, exact values live on the particles.
Vector interp_curve(const Vector& grid, const PointMatrix& pts, const Vector& values, double h) {
  Vector out(grid.size());
  for (Eigen::Index g = 0; g < grid.size(); ++g) {
    double num = 0.0;
    double den = 1e-300;
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      const double z = (grid[g] - pts(i, 0)) / h;
      const double k = std::exp(-0.5 * z * z);
      num += k * values[i];
      den += k;
    }
    out[g] = num / den;
  }
  return out;
}

std::string csv_row(const std::vector<double>& vals) {
  std::string row;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    if (i) row += ",";
    row += format_double(vals[i]);
  }
  return row;
}

json synthesis_result_to_json(const SynthesisResult& res) {
  json j;
  json w = json::array();
  for (Eigen::Index i = 0; i < res.weights.size(); ++i) w.push_back(res.weights[i]);
  j["weights"] = w;
  j["multiplier"] = res.multiplier;
  if (res.component_multipliers.size() > 0) {
    json cm = json::array();
    for (Eigen::Index i = 0; i < res.component_multipliers.size(); ++i)
      cm.push_back(res.component_multipliers[i]);
    j["component_multipliers"] = cm;
  }
  j["achieved"] = res.achieved;
  j["kl"] = res.kl;
  j["active"] = res.active;
  return j;
}

void write_resolved(const json& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_json_file(cfg, out_dir + "/config_resolved.json");
}

// ---------------------------------------------------------------------------
// synthesize
// ---------------------------------------------------------------------------

json synthesize_defaults() {
  json d;
  d["prior"] = "";
  d["target"] = "";
  d["epsilon"] = 1.0;
  d["delta_rel"] = 1e-4;
  d["seed"] = 42;
  d["metric"] = {{"kind", "wasserstein"}, {"p", 2.0}, {"eta_rel", 1e-2}, {"eta_abs", nullptr}};
  return d;
}

int cmd_synthesize(const CommonArgs& args) {
  const json cfg = resolve_config(synthesize_defaults(), args);
  write_resolved(cfg, args.out_dir);
  if (cfg["prior"].get<std::string>().empty() || cfg["target"].get<std::string>().empty())
    throw ConfigError("synthesize needs prior and target particle files");

  SynthesisProblem prob;
  prob.prior = read_particles(cfg["prior"].get<std::string>());
  prob.target = read_particles(cfg["target"].get<std::string>());
  prob.metric = parse_metric(cfg["metric"], true, {});
  prob.epsilon = cfg["epsilon"].get<double>();
  prob.delta_rel = cfg["delta_rel"].get<double>();

  const SynthesisResult res = synthesize(prob);

  write_json_file(synthesis_result_to_json(res), args.out_dir + "/result.json");
  write_particles_csv(ParticleSet{prob.prior.points, res.weights},
                      args.out_dir + "/posterior.csv");
  std::string summary = "metric,status,epsilon,achieved,kl_injection,multiplier,active\n";
  summary += cfg["metric"]["kind"].get<std::string>();
  summary += ",ok," + format_double(prob.epsilon) + "," + format_double(res.achieved) + "," +
             format_double(res.kl) + "," + format_double(res.multiplier) + "," +
             (res.active ? "1" : "0") + "\n";
  write_text_file(args.out_dir + "/summary.csv", summary);

  if (prob.prior.dim() == 1) {
    const Vector grid = curve_grid(prob.prior, prob.target);
    const double hp = silverman_bandwidth(prob.prior.points, prob.prior.weights);
    const double ht = silverman_bandwidth(prob.target.points, prob.target.weights);
    const Vector prior_pdf = kde_curve(grid, prob.prior.points, prob.prior.weights, hp);
    const Vector target_pdf = kde_curve(grid, prob.target.points, prob.target.weights, ht);
    const Vector post_pdf = kde_curve(grid, prob.prior.points, res.weights, hp);
    const ParticleLikelihood lik = recover_likelihood(res.weights, prob.prior);
    const Vector lik_curve = interp_curve(grid, prob.prior.points, lik.values, hp);
    std::string curves = "x,prior_pdf,target_pdf,posterior,likelihood\n";
    for (Eigen::Index g = 0; g < grid.size(); ++g)
      curves += csv_row({grid[g], prior_pdf[g], target_pdf[g], post_pdf[g], lik_curve[g]}) + "\n";
    write_text_file(args.out_dir + "/curves.csv", curves);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// scenario
// ---------------------------------------------------------------------------

json scenario_metric_defaults(const std::string& which) {
  json metrics = json::array();
  json w = {{"name", "wasserstein"}, {"kind", "wasserstein"}, {"p", 2.0},
            {"eta_rel", 1e-2},       {"eta_abs", nullptr},    {"epsilon", 0.5}};
  json m = {{"name", "mmd"}, {"kind", "mmd"}, {"sigma", 1.0}, {"epsilon", 0.1}};
  json mo = {{"name", "moment"},
             {"kind", "moments"},
             {"features", "mean_m2"},
             {"norm", "per_component"},
             {"scales", json::array({0.3, 1.0})},
             {"epsilon", 1.0}};
  json c = {{"name", "chi2"}, {"kind", "chi2"}, {"sigma", 0.0}, {"epsilon", 0.5}};
  if (which == "B") {
    m["epsilon"] = 0.046;
    m["sigma"] = 3.0;
    c["epsilon"] = 0.5;
  }
  metrics.push_back(w);
  metrics.push_back(m);
  metrics.push_back(mo);
  metrics.push_back(c);
  return metrics;
}

ScenarioData load_scenario(const std::string& which, std::uint64_t seed) {
  if (which == "A") return scenario_a(seed);
  if (which == "B") return scenario_b(seed);
  throw ConfigError("scenario must be A or B");
}

int cmd_scenario(const CommonArgs& args) {
  json defaults;
  defaults["scenario"] = "A";
  defaults["seed"] = 42;
  defaults["metrics"] = nullptr;  // filled per scenario below
  defaults["delta_rel"] = 1e-4;
  json cfg = resolve_config(defaults, args);
  const std::string which = cfg["scenario"].get<std::string>();
  if (cfg["metrics"].is_null()) cfg["metrics"] = scenario_metric_defaults(which);
  write_resolved(cfg, args.out_dir);

  const ScenarioData data = load_scenario(which, cfg["seed"].get<std::uint64_t>());

  std::string summary = "metric,status,epsilon,achieved,kl_injection,multiplier,"
                        "posterior_mean,posterior_var\n";
  json result;
  result["scenario"] = which;
  result["seed"] = cfg["seed"];
  result["metrics"] = json::object();

  const Vector grid = curve_grid(data.prior, data.target);
  const double hp = silverman_bandwidth(data.prior.points, data.prior.weights);
  const double ht = silverman_bandwidth(data.target.points, data.target.weights);
  std::vector<std::string> curve_names;
  std::vector<Vector> curve_cols;

  for (const json& entry : cfg["metrics"]) {
    const std::string name = entry.value("name", entry.value("kind", "metric"));
    SynthesisProblem prob;
    prob.prior = data.prior;
    prob.target = data.target;
    prob.metric = parse_metric(entry, true, {"name", "epsilon"});
    prob.epsilon = entry.value("epsilon", 1.0);
    prob.delta_rel = cfg["delta_rel"].get<double>();
    try {
      const SynthesisResult res = synthesize(prob);
      const Moments mom =
          weighted_mean_and_second_moment(ParticleSet{data.prior.points, res.weights});
      summary += name + ",ok," + format_double(prob.epsilon) + "," +
                 format_double(res.achieved) + "," + format_double(res.kl) + "," +
                 format_double(res.multiplier) + "," + format_double(mom.mean[0]) + "," +
                 format_double(mom.covariance()(0, 0)) + "\n";
      result["metrics"][name] = synthesis_result_to_json(res);
      const ParticleLikelihood lik = recover_likelihood(res.weights, data.prior);
      curve_names.push_back("posterior_" + name);
      curve_cols.push_back(kde_curve(grid, data.prior.points, res.weights, hp));
      curve_names.push_back("likelihood_" + name);
      curve_cols.push_back(interp_curve(grid, data.prior.points, lik.values, hp));
    } catch (const Infeasible& e) {
      summary += name + ",infeasible," + format_double(prob.epsilon) + ",nan,nan,nan,nan,nan\n";
      result["metrics"][name] = {{"error", "infeasible"}, {"message", e.what()}};
    } catch (const NoConvergence& e) {
      summary += name + ",no_convergence," + format_double(prob.epsilon) +
                 ",nan,nan,nan,nan,nan\n";
      result["metrics"][name] = {{"error", "no_convergence"}, {"message", e.what()}};
    }
  }

  write_text_file(args.out_dir + "/summary.csv", summary);
  write_json_file(result, args.out_dir + "/result.json");

  std::string curves = "x,prior_pdf,target_pdf";
  for (const std::string& n : curve_names) curves += "," + n;
  curves += "\n";
  const Vector prior_pdf = kde_curve(grid, data.prior.points, data.prior.weights, hp);
  const Vector target_pdf = kde_curve(grid, data.target.points, data.target.weights, ht);
  for (Eigen::Index g = 0; g < grid.size(); ++g) {
    std::vector<double> row = {grid[g], prior_pdf[g], target_pdf[g]};
    for (const Vector& col : curve_cols) row.push_back(col[g]);
    curves += csv_row(row) + "\n";
  }
  write_text_file(args.out_dir + "/curves.csv", curves);
  return 0;
}

// ---------------------------------------------------------------------------
// sweep-sensors
// ---------------------------------------------------------------------------

int cmd_sweep_sensors(const CommonArgs& args) {
  json defaults;
  defaults["scenario"] = "B";
  defaults["seed"] = 42;
  defaults["epsilon"] = 0.5;
  defaults["delta_rel"] = 1e-4;
  defaults["metric"] = {{"kind", "wasserstein"}, {"p", 2.0}, {"eta_rel", 1e-2},
                        {"eta_abs", nullptr}};
  defaults["r_min"] = 1;
  defaults["r_max"] = 16;
  defaults["restarts"] = 8;
  defaults["rho"] = 0.0;
  const json cfg = resolve_config(defaults, args);
  write_resolved(cfg, args.out_dir);

  const std::string which = cfg["scenario"].get<std::string>();
  const std::uint64_t seed = cfg["seed"].get<std::uint64_t>();
  const ScenarioData data = load_scenario(which, seed);
  const DiscrepancySpec metric = parse_metric(cfg["metric"], true, {});
  const int r_min = cfg["r_min"].get<int>();
  const int r_max = cfg["r_max"].get<int>();
  if (r_min < 1 || r_max < r_min) throw ConfigError("need 1 <= r_min <= r_max");

  SynthesisProblem prob;
  prob.prior = data.prior;
  prob.target = data.target;
  prob.metric = metric;
  prob.epsilon = cfg["epsilon"].get<double>();
  const SynthesisResult res = synthesize(prob);

  const RngStream master(seed);
  std::string sweep = "R,J_star,realized_distance,gap,wall_time_ms\n";
  std::string summary = "R,status,J_star,realized_distance,gap\n";
  json rows = json::array();
  double best_j = std::numeric_limits<double>::infinity();
  int best_r = r_min;
  FitResult best_fit;
  for (int r = r_min; r <= r_max; ++r) {
    Layer2Config l2;
    l2.sensors = r;
    l2.restarts = cfg["restarts"].get<int>();
    l2.rho = cfg["rho"].get<double>();
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const FitResult fit = fit_sensors(data.prior, res.weights, l2,
                                        master.split(static_cast<std::uint64_t>(r), 1000),
                                        &metric, &data.target, prob.epsilon);
      const double ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
      sweep += std::to_string(r) + "," + format_double(fit.fitting_error) + "," +
               format_double(fit.realized_discrepancy) + "," +
               format_double(fit.realizability_gap) + "," + format_double(ms) + "\n";
      summary += std::to_string(r) + ",ok," + format_double(fit.fitting_error) + "," +
                 format_double(fit.realized_discrepancy) + "," +
                 format_double(fit.realizability_gap) + "\n";
      rows.push_back({{"r", r},
                      {"j_star", fit.fitting_error},
                      {"realized_distance", fit.realized_discrepancy},
                      {"gap", fit.realizability_gap},
                      {"status", "ok"}});
      if (fit.fitting_error < best_j) {
        best_j = fit.fitting_error;
        best_r = r;
        best_fit = fit;
      }
    } catch (const Error& e) {
      const double ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
      sweep += std::to_string(r) + ",nan,nan,nan," + format_double(ms) + "\n";
      summary += std::to_string(r) + ",failed,nan,nan,nan\n";
      rows.push_back({{"r", r}, {"status", "failed"}, {"message", e.what()}});
    }
  }

  write_text_file(args.out_dir + "/sweep.csv", sweep);
  write_text_file(args.out_dir + "/summary.csv", summary);
  json result;
  result["scenario"] = which;
  result["seed"] = cfg["seed"];
  result["epsilon"] = prob.epsilon;
  result["rows"] = rows;
  result["best_r"] = best_r;
  if (std::isfinite(best_j)) result["best_fit"] = fit_result_to_json(best_fit);
  write_json_file(result, args.out_dir + "/result.json");

  if (data.prior.dim() == 1 && std::isfinite(best_j)) {
    const Vector grid = curve_grid(data.prior, data.target);
    const double hp = silverman_bandwidth(data.prior.points, data.prior.weights);
    const double ht = silverman_bandwidth(data.target.points, data.target.weights);
    const Vector prior_pdf = kde_curve(grid, data.prior.points, data.prior.weights, hp);
    const Vector target_pdf = kde_curve(grid, data.target.points, data.target.weights, ht);
    PointMatrix gp(grid.size(), 1);
    gp.col(0) = grid;
    const Vector loglik = log_sensor_likelihood_all(best_fit.config, gp);
    std::string curves = "x,prior_pdf,target_pdf,likelihood_best\n";
    for (Eigen::Index g = 0; g < grid.size(); ++g)
      curves +=
          csv_row({grid[g], prior_pdf[g], target_pdf[g], std::exp(loglik[g])}) + "\n";
    write_text_file(args.out_dir + "/curves.csv", curves);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// filter
// ---------------------------------------------------------------------------

int cmd_filter(const CommonArgs& args) {
  json defaults;
  defaults["scenario"] = "A";
  defaults["seed"] = 42;
  defaults["steps"] = 20;
  defaults["delta_rel"] = 1e-4;
  defaults["dynamics"] = {{"kind", "identity"}, {"a", 0.9}, {"q", 0.19}};
  defaults["target"] = {{"kind", "dirac"}, {"covariance", 0.25}, {"samples", 500}};
  defaults["metric"] = {{"kind", "wasserstein"}, {"p", 2.0}, {"eta_rel", 1e-2},
                        {"eta_abs", nullptr}};
  defaults["budget"] = {{"kind", "fixed"},   {"epsilon", 0.5}, {"tighten", 0.9},
                        {"relax", 1.25},     {"ess_high", 0.8}, {"ess_low", 0.2},
                        {"kl_small", 0.05}};
  defaults["layer2"] = {{"sensors", 2}, {"restarts", 4}, {"rho", 0.0}};
  const json cfg = resolve_config(defaults, args);
  write_resolved(cfg, args.out_dir);

  const std::uint64_t seed = cfg["seed"].get<std::uint64_t>();
  const ScenarioData data = load_scenario(cfg["scenario"].get<std::string>(), seed);

  const json& dj = cfg["dynamics"];
  require_keys(dj, {"kind", "a", "q"}, "dynamics");
  DynamicsModel model;
  if (dj["kind"] == "identity")
    model = identity_dynamics();
  else if (dj["kind"] == "linear_gaussian")
    model = linear_gaussian_dynamics(dj["a"].get<double>(), dj["q"].get<double>());
  else
    throw ConfigError("unknown dynamics kind");

  const json& tj = cfg["target"];
  require_keys(tj, {"kind", "covariance", "samples"}, "target policy");
  TargetPolicy policy;
  const Eigen::Index d = data.prior.dim();
  if (tj["kind"] == "dirac") {
    policy.kind = TargetKind::DiracAtReference;
  } else if (tj["kind"] == "gaussian") {
    policy.kind = TargetKind::GaussianAroundReference;
    policy.covariance = tj["covariance"].get<double>() * Matrix::Identity(d, d);
    policy.sample_count = tj["samples"].get<int>();
  } else {
    throw ConfigError("unknown target policy kind");
  }

  const json& bj = cfg["budget"];
  require_keys(bj, {"kind", "epsilon", "tighten", "relax", "ess_high", "ess_low", "kl_small"},
               "budget");
  BudgetPolicy budget = bj["kind"] == "adaptive"
                            ? BudgetPolicy::adaptive(bj["epsilon"].get<double>())
                            : BudgetPolicy::fixed(bj["epsilon"].get<double>());
  budget.tighten = bj["tighten"].get<double>();
  budget.relax = bj["relax"].get<double>();
  budget.ess_high = bj["ess_high"].get<double>();
  budget.ess_low = bj["ess_low"].get<double>();
  budget.kl_small = bj["kl_small"].get<double>();

  const json& lj = cfg["layer2"];
  require_keys(lj, {"sensors", "restarts", "rho"}, "layer2");
  Layer2Config layer2;
  layer2.sensors = lj["sensors"].get<int>();
  layer2.restarts = lj["restarts"].get<int>();
  layer2.rho = lj["rho"].get<double>();

  const DiscrepancySpec metric = parse_metric(cfg["metric"], true, {});
  const int steps = cfg["steps"].get<int>();
  if (steps < 0) throw ConfigError("steps must be nonnegative");

  FilterState state;
  state.particles = data.prior;
  state.epsilon = bj["epsilon"].get<double>();
  const RngStream master(seed);

  std::string trace;
  std::string summary = "step,status,epsilon_used,multiplier,kl_injection,realizability_gap,"
                        "ess_before,ess_after,resampled\n";
  for (int k = 0; k < steps; ++k) {
    const StepOutput out = step(state, model, policy, budget, metric, layer2, master);
    json line;
    line["step"] = k;
    line["diagnostics"] = step_diagnostics_to_json(out.diagnostics);
    line["sensors"] = sensor_config_to_json(out.sensors);
    line["fitting_error"] = out.fit.fitting_error;
    trace += line.dump() + "\n";
    const StepDiagnostics& dg = out.diagnostics;
    summary += std::to_string(k) + ",ok," + format_double(dg.epsilon_used) + "," +
               format_double(dg.multiplier) + "," + format_double(dg.kl_injection) + "," +
               format_double(dg.realizability_gap) + "," + format_double(dg.ess_before) + "," +
               format_double(dg.ess_after) + "," + (dg.resampled ? "1" : "0") + "\n";
  }
  write_text_file(args.out_dir + "/trace.jsonl", trace);
  write_text_file(args.out_dir + "/summary.csv", summary);

  const Moments mom = weighted_mean_and_second_moment(state.particles);
  json result;
  result["steps"] = steps;
  result["final_epsilon"] = state.epsilon;
  json mean = json::array();
  for (Eigen::Index c = 0; c < mom.mean.size(); ++c) mean.push_back(mom.mean[c]);
  result["posterior_mean"] = mean;
  json var = json::array();
  for (Eigen::Index c = 0; c < mom.mean.size(); ++c) var.push_back(mom.covariance()(c, c));
  result["posterior_var"] = var;
  write_json_file(result, args.out_dir + "/result.json");
  return 0;
}

void report_error(const std::string& code, const std::string& message) {
  json j;
  j["error"] = code;
  j["message"] = message;
  std::cerr << j.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"likelihood synthesis toolkit"};
  app.require_subcommand(1);

  CommonArgs synth_args, scen_args, sweep_args, filt_args;
  CLI::App* synth = app.add_subcommand("synthesize", "reweight a prior toward a target");
  add_common(synth, synth_args);
  CLI::App* scen = app.add_subcommand("scenario", "run a benchmark scenario across metrics");
  add_common(scen, scen_args);
  CLI::App* sweep = app.add_subcommand("sweep-sensors", "sweep the sensor count");
  add_common(sweep, sweep_args);
  CLI::App* filt = app.add_subcommand("filter", "run the multi-step filter demo");
  add_common(filt, filt_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    report_error("usage", e.what());
    return 1;
  }

  try {
    if (synth->parsed()) return cmd_synthesize(synth_args);
    if (scen->parsed()) return cmd_scenario(scen_args);
    if (sweep->parsed()) return cmd_sweep_sensors(sweep_args);
    return cmd_filter(filt_args);
  } catch (const Infeasible& e) {
    report_error("infeasible", e.what());
    return 2;
  } catch (const NoConvergence& e) {
    report_error("no_convergence", e.what());
    return 3;
  } catch (const Error& e) {
    report_error("config", e.what());
    return 1;
  } catch (const json::exception& e) {
    report_error("config", e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return 1;
  }
}
