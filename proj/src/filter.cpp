#include "lisyn/filter.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "lisyn/errors.hpp"

namespace lisyn {

DynamicsModel identity_dynamics() {
  return {[](const Vector& x, RngStream&) { return x; }, "identity"};
}

DynamicsModel linear_gaussian_dynamics(double a, double process_var) {
  if (!(process_var >= 0.0)) throw ConfigError("process variance must be nonnegative");
  const double sd = std::sqrt(process_var);
  return {[a, sd](const Vector& x, RngStream& rng) {
            Vector out = a * x;
            for (Eigen::Index c = 0; c < out.size(); ++c) out[c] += sd * rng.normal();
            return out;
          },
          "linear-gaussian"};
}

BudgetPolicy BudgetPolicy::fixed(double eps) {
  BudgetPolicy p;
  p.kind = Kind::Fixed;
  p.epsilon0 = eps;
  p.eps_min = eps / 10.0;
  p.eps_max = eps * 10.0;
  return p;
}

BudgetPolicy BudgetPolicy::adaptive(double eps0) {
  BudgetPolicy p = fixed(eps0);
  p.kind = Kind::Adaptive;
  return p;
}

ParticleSet predict(const ParticleSet& particles, const DynamicsModel& model, RngStream& rng) {
  validate(particles);
  if (!model.sampler) throw ConfigError("dynamics model has no sampler");
  ParticleSet out = particles;
  for (Eigen::Index i = 0; i < particles.size(); ++i) {
    const Vector next = model.sampler(particles.points.row(i).transpose(), rng);
    if (next.size() != particles.dim())
      throw DimensionMismatch("transition sampler changed the state dimension");
    out.points.row(i) = next.transpose();
  }
  return out;
}

ParticleSet make_target(const ParticleSet& prior, const TargetPolicy& policy, RngStream& rng) {
  validate(prior);
  const Eigen::Index d = prior.dim();
  Vector ref;
  if (policy.reference) {
    ref = *policy.reference;
    if (ref.size() != d) throw DimensionMismatch("reference dimension mismatch");
  } else {
    ref = weighted_mean_and_second_moment(prior).mean;
  }

  switch (policy.kind) {
    case TargetKind::DiracAtReference: {
      PointMatrix pts(1, d);
      pts.row(0) = ref.transpose();
      return make_particle_set(std::move(pts), Vector::Ones(1));
    }
    case TargetKind::GaussianAroundReference: {
      if (policy.covariance.rows() != d || policy.covariance.cols() != d)
        throw DimensionMismatch("covariance budget must be d x d");
      if (policy.sample_count < 1) throw ConfigError("need at least one target sample");
      const Eigen::LLT<Matrix> llt(policy.covariance);
      if (llt.info() != Eigen::Success) throw NotSpd("covariance budget is not positive definite");
      const Matrix l = llt.matrixL();
      PointMatrix pts(policy.sample_count, d);
      Vector z(d);
      for (int m = 0; m < policy.sample_count; ++m) {
        for (Eigen::Index c = 0; c < d; ++c) z[c] = rng.normal();
        pts.row(m) = (ref + l * z).transpose();
      }
      return make_particle_set(std::move(pts),
                               Vector::Constant(policy.sample_count,
                                                1.0 / policy.sample_count));
    }
    case TargetKind::ExplicitParticles: {
      if (!policy.particles) throw ConfigError("explicit target policy carries no particles");
      validate(*policy.particles);
      if (policy.particles->dim() != d) throw DimensionMismatch("target dimension mismatch");
      return *policy.particles;
    }
  }
  throw ConfigError("unknown target policy");
}

double adapt_budget(const StepDiagnostics& diag, const BudgetPolicy& policy, double eps,
                    Eigen::Index particle_count) {
  if (policy.kind == BudgetPolicy::Kind::Fixed) return eps;
  const double frac = diag.ess_after / static_cast<double>(particle_count);
  double next = eps;
  if (frac >= policy.ess_high && diag.kl_injection <= policy.kl_small)
    next = eps * policy.tighten;
  else if (frac <= policy.ess_low)
    next = eps * policy.relax;
  return std::min(std::max(next, policy.eps_min), policy.eps_max);
}

StepOutput step(FilterState& state, const DynamicsModel& model, const TargetPolicy& target_policy,
                const BudgetPolicy& budget, const DiscrepancySpec& spec,
                const Layer2Config& layer2, const RngStream& master) {
  const int k = state.step_index;
  RngStream rng_predict = master.split(static_cast<std::uint64_t>(k), 0);
  RngStream rng_target = master.split(static_cast<std::uint64_t>(k), 1);
  const RngStream rng_layer2 = master.split(static_cast<std::uint64_t>(k), 2);
  RngStream rng_resample = master.split(static_cast<std::uint64_t>(k), 3);

  const ParticleSet prior = predict(state.particles, model, rng_predict);
  const ParticleSet target = make_target(prior, target_policy, rng_target);

  SynthesisProblem problem;
  problem.prior = prior;
  problem.target = target;
  problem.metric = spec;
  problem.epsilon = state.epsilon;

  StepOutput out;
  try {
    out.synthesis = synthesize(problem);
  } catch (const Infeasible& e) {
    throw Infeasible("step " + std::to_string(k) + ": " + e.what());
  } catch (const NoConvergence& e) {
    throw NoConvergence("step " + std::to_string(k) + ": " + e.what());
  }

  try {
    out.fit = fit_sensors(prior, out.synthesis.weights, layer2, rng_layer2, &spec, &target,
                          state.epsilon);
  } catch (const NoConvergence& e) {
    throw NoConvergence("step " + std::to_string(k) + ": " + e.what());
  }
  out.sensors = out.fit.config;

  // An inactive budget means the prior already satisfies the constraint, so
  // the realized update is skipped and the posterior is the prior itself.
  ParticleSet posterior = prior;
  if (out.synthesis.active) posterior.weights = out.fit.realized_weights;

  out.diagnostics.kl_injection = out.synthesis.kl;
  out.diagnostics.multiplier = out.synthesis.multiplier;
  out.diagnostics.epsilon_used = state.epsilon;
  out.diagnostics.realizability_gap = out.synthesis.active
                                          ? out.fit.realizability_gap
                                          : out.synthesis.achieved - state.epsilon;
  out.diagnostics.ess_before = ess(posterior.weights);

  const double n_thresh = static_cast<double>(posterior.size()) / 2.0;
  if (out.diagnostics.ess_before < n_thresh) {
    posterior = systematic_resample(posterior, rng_resample);
    out.diagnostics.resampled = true;
  }
  out.diagnostics.ess_after = ess(posterior.weights);

  state.epsilon = adapt_budget(out.diagnostics, budget, state.epsilon, posterior.size());
  state.particles = std::move(posterior);
  state.step_index = k + 1;
  return out;
}

json step_diagnostics_to_json(const StepDiagnostics& d) {
  json j;
  j["kl_injection"] = d.kl_injection;
  j["realizability_gap"] = d.realizability_gap;
  j["ess_before"] = d.ess_before;
  j["ess_after"] = d.ess_after;
  j["multiplier"] = d.multiplier;
  j["epsilon_used"] = d.epsilon_used;
  j["resampled"] = d.resampled;
  return j;
}

}  // namespace lisyn
