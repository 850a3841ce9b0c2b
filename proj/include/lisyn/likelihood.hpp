#ifndef LISYN_LIKELIHOOD_HPP
#define LISYN_LIKELIHOOD_HPP

#include <string>
#include <vector>

#include "lisyn/io.hpp"
#include "lisyn/optim.hpp"
#include "lisyn/particles.hpp"

namespace lisyn {

// Likelihood values on the prior support, defined up to positive scale and
// normalized so the largest value is 1.  Atoms whose posterior weight was
// clamped to zero carry value 0 and are skipped by log-domain fitting.
struct ParticleLikelihood {
  Vector values;
  ParticleSet support;
};

// L_i = w_opt_i / w_prior_i where the prior has mass, rescaled to max 1.
// The Bayes update of the prior with this likelihood reproduces w_opt.
ParticleLikelihood recover_likelihood(const Vector& w_opt, const ParticleSet& prior);

// w_i+ proportional to w_i- L_i, normalized.
Vector bayes_update(const Vector& prior_weights, const Vector& likelihood);

// ---------------------------------------------------------------------------
// Sensor mixtures
// ---------------------------------------------------------------------------

// Mixture of Gaussian kernels, one per sensor.  The unconstrained
// parameterization (logits, log bandwidths) is authoritative; alphas and
// bandwidths are kept in sync by sensor_config_from_unconstrained.
// bandwidths has one column for a shared radius per sensor or d columns for
// per-coordinate radii.
struct SensorConfig {
  PointMatrix positions;  // R x d
  Vector alphas;          // simplex over R
  Matrix bandwidths;      // R x 1 or R x d, positive
  Vector logits;
  Matrix log_bandwidths;

  Eigen::Index sensor_count() const { return positions.rows(); }
};

SensorConfig sensor_config_from_unconstrained(const PointMatrix& positions, const Vector& logits,
                                              const Matrix& log_bandwidths);

// sum_r alpha_r exp(-||x - s_r||^2 / (2 h_r^2)), always in (0, 1].
double eval_sensor_likelihood(const SensorConfig& cfg, const Vector& x);
double log_sensor_likelihood(const SensorConfig& cfg, const Vector& x);

// Log-likelihood at every row of pts; stays finite for far-away points.
Vector log_sensor_likelihood_all(const SensorConfig& cfg, const PointMatrix& pts);

json sensor_config_to_json(const SensorConfig& cfg);
SensorConfig sensor_config_from_json(const json& j);
// One row per sensor: position components, alpha, bandwidth columns.
void write_sensor_config_csv(const SensorConfig& cfg, const std::string& path);

json particle_likelihood_to_json(const ParticleLikelihood& lik);

// ---------------------------------------------------------------------------
// Gaussian-mixture distillation
// ---------------------------------------------------------------------------

struct GaussianComponent {
  Vector mean;
  Matrix covariance;  // symmetric positive definite
};

struct GaussianMixtureLikelihood {
  Vector alphas;  // simplex
  std::vector<GaussianComponent> components;

  double log_density(const Vector& x) const;
};

struct DistillConfig {
  int component_count = 1;
  int restarts = 4;
  // Centered residuals absorb the likelihood's arbitrary scale; raw
  // residuals compare log values directly and are only meaningful when the
  // mixture's own normalization is intended to match.
  bool center_residuals = true;
  QuasiNewtonConfig solver;
};

struct DistillResult {
  GaussianMixtureLikelihood model;
  double objective = 0.0;
  // Weighted variance of log L* was negligible: any sufficiently wide fit
  // reaches objective zero, so the fitted shape is not informative.
  bool flat_likelihood = false;
  std::vector<double> restart_values;
  int best_restart = 0;
};

// Weighted least squares on log values: minimizes
// sum_i wbar_i (log L_i - log gmm(x_i) - offset)^2 with the offset the
// weighted residual mean when centering is on, 0 otherwise.  Covariances are
// optimized through their Cholesky factor with log diagonal, so they stay
// positive definite.
DistillResult distill_gmm(const ParticleLikelihood& lik, const Vector& fit_weights,
                          const DistillConfig& cfg, const RngStream& rng);

}  // namespace lisyn

#endif
