#ifndef LISYN_SENSOR_DESIGN_HPP
#define LISYN_SENSOR_DESIGN_HPP

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "lisyn/discrepancy.hpp"
#include "lisyn/likelihood.hpp"
#include "lisyn/optim.hpp"
#include "lisyn/particles.hpp"

namespace lisyn {

struct Layer2Config {
  int sensors = 1;
  int restarts = 8;
  // Anchor penalty rho * sum_r ||s_r - s_prev_r||^2; prev_positions must be
  // set when rho > 0.
  double rho = 0.0;
  std::optional<PointMatrix> prev_positions;
  bool diagonal_bandwidths = false;
  double position_sigma = 1.0;       // restart jitter std per coordinate
  double log_bandwidth_sigma = 0.8;  // restart jitter std on log h
  QuasiNewtonConfig solver;
};

struct FitResult {
  SensorConfig config;
  double fitting_error = 0.0;
  Vector realized_weights;
  // Filled only when fit_sensors was given a metric and target; NaN says
  // "not evaluated", not "zero gap".
  double realized_discrepancy = std::numeric_limits<double>::quiet_NaN();
  double realizability_gap = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> restart_errors;
  int best_restart = 0;
};

// Flat parameter order used by the fitter and the gradient:
// [positions row-major R*d | logits R | log bandwidths row-major R*B].
Vector pack_sensor_parameters(const SensorConfig& cfg);
SensorConfig unpack_sensor_parameters(const Vector& theta, Eigen::Index dim, int sensors,
                                      bool diagonal_bandwidths);

// Weighted least squares between log L* and the sensor mixture's log
// likelihood, centered so a common rescaling of L* changes nothing:
//   J = sum_i wbar_i (r_i - cbar)^2 + rho sum_r ||s_r - s_prev_r||^2,
//   r_i = log L*_i - log L(x_i; theta),  cbar = sum_i wbar_i r_i.
// When grad is non-null it receives the analytic gradient in the packed
// parameter order.  Atoms with wbar_i = 0 do not contribute.
double fitting_objective(const SensorConfig& theta, const ParticleSet& prior,
                         const ParticleLikelihood& lik, const Vector& wbar, double rho,
                         const PointMatrix& prev_positions, Vector* grad = nullptr);

// Multi-start fit of a sensor mixture to the likelihood recovered from
// w_opt, followed by the realized update w+ ~ w- L(x; theta*).  Restart 1
// starts from the deterministic initialization (positions at weighted
// quantiles along the dominant-variance axis, Silverman bandwidths, logits
// 0); later restarts jitter positions and log bandwidths.  When metric and
// target are given, realized_discrepancy and realizability_gap are filled.
FitResult fit_sensors(const ParticleSet& prior, const Vector& w_opt, const Layer2Config& cfg,
                      const RngStream& rng, const DiscrepancySpec* metric = nullptr,
                      const ParticleSet* target = nullptr, double epsilon = 0.0);

// evaluate(spec, realized, target) - epsilon; negative means the sensor
// family met the budget.
double realizability_gap(const ParticleSet& realized, const ParticleSet& target,
                         const DiscrepancySpec& spec, double epsilon);

json fit_result_to_json(const FitResult& fr);

}  // namespace lisyn

#endif
