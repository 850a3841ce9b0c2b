#ifndef LISYN_FILTER_HPP
#define LISYN_FILTER_HPP

#include <functional>
#include <optional>
#include <string>

#include "lisyn/sensor_design.hpp"
#include "lisyn/synthesis.hpp"

namespace lisyn {

struct DynamicsModel {
  // Must accept any d-vector and return a d-vector.
  std::function<Vector(const Vector&, RngStream&)> sampler;
  std::string label;
};

DynamicsModel identity_dynamics();
// x <- a x + N(0, process_var I), coordinatewise.
DynamicsModel linear_gaussian_dynamics(double a, double process_var);

enum class TargetKind { DiracAtReference, GaussianAroundReference, ExplicitParticles };

struct TargetPolicy {
  TargetKind kind = TargetKind::DiracAtReference;
  // Covariance budget for the Gaussian variant.
  Matrix covariance;
  int sample_count = 500;
  // External reference overrides the prior weighted mean.
  std::optional<Vector> reference;
  std::optional<ParticleSet> particles;  // ExplicitParticles payload
};

struct BudgetPolicy {
  enum class Kind { Fixed, Adaptive } kind = Kind::Fixed;
  double epsilon0 = 1.0;
  double tighten = 0.9;
  double relax = 1.25;
  double ess_high = 0.8;
  double ess_low = 0.2;
  double kl_small = 0.05;
  double eps_min = 0.1;
  double eps_max = 10.0;

  static BudgetPolicy fixed(double eps);
  static BudgetPolicy adaptive(double eps0);
};

struct StepDiagnostics {
  double kl_injection = 0.0;
  double realizability_gap = 0.0;
  double ess_before = 0.0;
  double ess_after = 0.0;
  double multiplier = 0.0;
  double epsilon_used = 0.0;
  bool resampled = false;
};

struct FilterState {
  ParticleSet particles;
  double epsilon = 1.0;
  int step_index = 0;
};

struct StepOutput {
  SensorConfig sensors;
  StepDiagnostics diagnostics;
  SynthesisResult synthesis;
  FitResult fit;
};

// Points pass through the transition sampler; weights are untouched.
ParticleSet predict(const ParticleSet& particles, const DynamicsModel& model, RngStream& rng);

// Dirac: one point at the reference with weight 1.  Gaussian: sample_count
// draws from N(reference, covariance), uniform weights.  Explicit:
// passthrough of the supplied set.
ParticleSet make_target(const ParticleSet& prior, const TargetPolicy& policy, RngStream& rng);

// One filter cycle: predict, build target, synthesize the ideal posterior,
// fit sensors to its likelihood, apply the realized update, diagnose,
// resample when ESS < N/2, adapt the budget.  Advances state in place.
// Substreams derive from (step index, purpose), so every run under one
// master seed is reproducible regardless of caller draws.  Infeasible and
// NoConvergence are rethrown with the step index attached; an inactive
// budget skips the realized update and keeps the prior weights.
StepOutput step(FilterState& state, const DynamicsModel& model, const TargetPolicy& target_policy,
                const BudgetPolicy& budget, const DiscrepancySpec& spec,
                const Layer2Config& layer2, const RngStream& master);

// Fixed policies return eps unchanged; adaptive ones tighten on high ESS
// with small KL injection, relax on low ESS, and clamp to [eps_min, eps_max].
double adapt_budget(const StepDiagnostics& diag, const BudgetPolicy& policy, double eps,
                    Eigen::Index particle_count);

json step_diagnostics_to_json(const StepDiagnostics& d);

}  // namespace lisyn

#endif
