#ifndef LISYN_SYNTHESIS_HPP
#define LISYN_SYNTHESIS_HPP

#include <optional>

#include "lisyn/discrepancy.hpp"
#include "lisyn/optim.hpp"

namespace lisyn {

// KL(w || ref) with the 0 log 0 = 0 convention.  Throws SupportViolation
// when w puts mass where ref has none.  Clamped at zero from below.
double kl_divergence_weights(const Vector& w, const Vector& ref);

struct SynthesisProblem {
  ParticleSet prior;
  ParticleSet target;
  DiscrepancySpec metric = DiscrepancySpec::wasserstein();
  double epsilon = 0.0;
  // Multiplier root tolerance is delta_rel * epsilon.
  double delta_rel = 1e-4;
  MirrorDescentConfig inner;
  RootFindConfig root;
};

struct SynthesisResult {
  Vector weights;
  double multiplier = 0.0;
  // Per-feature duals for the per-component moment norm; empty otherwise.
  Vector component_multipliers;
  double achieved = 0.0;
  double kl = 0.0;
  bool active = false;
  // Entropic plan between the synthesized posterior and the target
  // (Wasserstein metric, active constraint only).
  std::optional<TransportPlan> plan;
};

// Minimizes KL(w || prior weights) subject to D(w, target) <= epsilon over
// the simplex.  Inactive budgets return the prior weights with multiplier 0.
// Support never grows: zero prior weights stay zero.  Throws Infeasible when
// no reweighting can reach the budget.
SynthesisResult synthesize(const SynthesisProblem& problem);

// Closed-form budget on prediction errors: w_i proportional to
// w_i^- exp(-lambda ||e_i||^2) with lambda chosen so the weighted mean
// squared error equals eps^2.  prior_errors carries the error vectors
// e_i = x_i - reference as points and the prior weights as weights; the
// result's achieved field is the weighted RMS error.
SynthesisResult exponential_tilt(const ParticleSet& prior_errors, double eps);

// Dense reference solver for small instances (N <= 20): projected-gradient
// inner solves over a fine multiplier sweep.  Independent of the scaling and
// fixed-point machinery in synthesize; exists to cross-check it in tests.
SynthesisResult brute_force_synthesize(const SynthesisProblem& problem);

}  // namespace lisyn

#endif
