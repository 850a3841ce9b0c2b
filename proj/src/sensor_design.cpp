#include "lisyn/sensor_design.hpp"

#include <cmath>
#include <utility>
#include <variant>

#include "lisyn/detail/lse.hpp"
#include "lisyn/errors.hpp"
#include "lisyn/kernels.hpp"

namespace lisyn {

using detail::row_lse;
using detail::vec_lse;

Vector pack_sensor_parameters(const SensorConfig& cfg) {
  const Eigen::Index r = cfg.sensor_count();
  const Eigen::Index d = cfg.positions.cols();
  const Eigen::Index b = cfg.log_bandwidths.cols();
  Vector theta(r * d + r + r * b);
  Eigen::Index off = 0;
  for (Eigen::Index s = 0; s < r; ++s)
    for (Eigen::Index c = 0; c < d; ++c) theta[off++] = cfg.positions(s, c);
  theta.segment(off, r) = cfg.logits;
  off += r;
  for (Eigen::Index s = 0; s < r; ++s)
    for (Eigen::Index c = 0; c < b; ++c) theta[off++] = cfg.log_bandwidths(s, c);
  return theta;
}

SensorConfig unpack_sensor_parameters(const Vector& theta, Eigen::Index dim, int sensors,
                                      bool diagonal_bandwidths) {
  const Eigen::Index r = sensors;
  const Eigen::Index b = diagonal_bandwidths ? dim : 1;
  if (theta.size() != r * dim + r + r * b)
    throw DimensionMismatch("packed sensor parameter length mismatch");
  PointMatrix positions(r, dim);
  Eigen::Index off = 0;
  for (Eigen::Index s = 0; s < r; ++s)
    for (Eigen::Index c = 0; c < dim; ++c) positions(s, c) = theta[off++];
  const Vector logits = theta.segment(off, r);
  off += r;
  Matrix logbw(r, b);
  for (Eigen::Index s = 0; s < r; ++s)
    for (Eigen::Index c = 0; c < b; ++c) logbw(s, c) = theta[off++];
  return sensor_config_from_unconstrained(positions, logits, logbw);
}

namespace {

// Shared state for the packed-parameter objective.  y holds log L* with
// zeros at atoms that carry no fitting weight; those atoms never touch the
// value or the gradient.
struct FitContext {
  const PointMatrix& pts;
  Vector y;
  Vector wbar;
  int sensors = 1;
  bool diagonal = false;
  double rho = 0.0;
  PointMatrix prev;

  double eval(const Vector& theta, Vector* grad) const;
};

double FitContext::eval(const Vector& theta, Vector* grad) const {
  const Eigen::Index n = pts.rows();
  const Eigen::Index d = pts.cols();
  const Eigen::Index r = sensors;
  const Eigen::Index b = diagonal ? d : 1;

  PointMatrix pos(r, d);
  Eigen::Index off = 0;
  for (Eigen::Index s = 0; s < r; ++s)
    for (Eigen::Index c = 0; c < d; ++c) pos(s, c) = theta[off++];
  const Vector logits = theta.segment(off, r);
  off += r;
  Matrix h(r, b);
  for (Eigen::Index s = 0; s < r; ++s)
    for (Eigen::Index c = 0; c < b; ++c) h(s, c) = std::exp(theta[off++]);

  Matrix q(n, r);
  if (!diagonal) {
    const Matrix sq = cost_matrix(pts, pos, 2.0);
    for (Eigen::Index s = 0; s < r; ++s) q.col(s) = sq.col(s) / (2.0 * h(s, 0) * h(s, 0));
  } else {
    for (Eigen::Index s = 0; s < r; ++s) {
      Matrix diff = pts;
      diff.rowwise() -= pos.row(s);
      for (Eigen::Index c = 0; c < d; ++c) diff.col(c) /= h(s, c);
      q.col(s) = 0.5 * diff.rowwise().squaredNorm();
    }
  }
  const Vector logalpha = (logits.array() - vec_lse(logits)).matrix();
  Vector logl(n);
  row_lse(-q, logalpha, logl);

  Vector res = Vector::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (wbar[i] <= 0.0) continue;
    res[i] = y[i] - logl[i];
    if (!std::isfinite(res[i]))
      throw NonFinite("sensor mixture vanished at a weighted particle");
  }
  const double cbar = wbar.dot(res);
  double value = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double dev = res[i] - cbar;
    if (wbar[i] > 0.0) value += wbar[i] * dev * dev;
  }
  if (rho > 0.0) value += rho * (pos - prev).squaredNorm();
  if (grad == nullptr) return value;

  // dJ = sum_i gtil_i * d r_i with gtil_i = gamma_i - (sum gamma) wbar_i;
  // the correction keeps the gradient exact when the weights sum to one
  // only up to rounding.  r_i depends on theta through -log L(x_i).
  Vector gamma(n);
  for (Eigen::Index i = 0; i < n; ++i)
    gamma[i] = (wbar[i] > 0.0) ? 2.0 * wbar[i] * (res[i] - cbar) : 0.0;
  const double gsum = gamma.sum();
  const Vector gtil = gamma - gsum * wbar;

  grad->resize(theta.size());
  grad->setZero();
  Eigen::Index gp = 0;               // positions
  Eigen::Index gl = r * d;           // logits
  Eigen::Index gh = r * d + r;       // log bandwidths
  for (Eigen::Index s = 0; s < r; ++s) {
    // resp_is = alpha_s exp(-q_is) / L_i, the component responsibility
    const Vector t =
        gtil.cwiseProduct(((-q.col(s)).array() + logalpha[s] - logl.array()).exp().matrix());
    const double tsum = t.sum();
    (*grad)[gl + s] = -tsum;
    if (!diagonal) {
      const double h2 = h(s, 0) * h(s, 0);
      for (Eigen::Index c = 0; c < d; ++c)
        (*grad)[gp + s * d + c] = -(pts.col(c).dot(t) - pos(s, c) * tsum) / h2;
      (*grad)[gh + s] = -2.0 * t.dot(q.col(s));
    } else {
      for (Eigen::Index c = 0; c < d; ++c) {
        const double h2 = h(s, c) * h(s, c);
        const Vector dc = (pts.col(c).array() - pos(s, c)).matrix();
        (*grad)[gp + s * d + c] = -t.dot(dc) / h2;
        (*grad)[gh + s * b + c] = -t.dot(dc.cwiseProduct(dc)) / h2;
      }
    }
  }
  if (rho > 0.0)
    for (Eigen::Index s = 0; s < r; ++s)
      for (Eigen::Index c = 0; c < d; ++c)
        (*grad)[gp + s * d + c] += 2.0 * rho * (pos(s, c) - prev(s, c));
  return value;
}

}  // namespace

double fitting_objective(const SensorConfig& theta, const ParticleSet& prior,
                         const ParticleLikelihood& lik, const Vector& wbar, double rho,
                         const PointMatrix& prev_positions, Vector* grad) {
  validate(prior);
  if (lik.values.size() != prior.size() || wbar.size() != prior.size())
    throw DimensionMismatch("likelihood and weights must match the prior");
  if (theta.positions.cols() != prior.dim())
    throw DimensionMismatch("sensor dimension does not match the particles");
  if (rho > 0.0 && (prev_positions.rows() != theta.sensor_count() ||
                    prev_positions.cols() != theta.positions.cols()))
    throw DimensionMismatch("anchor positions must match the sensor layout");

  FitContext ctx{prior.points, Vector::Zero(prior.size()), wbar,
                 static_cast<int>(theta.sensor_count()),
                 theta.log_bandwidths.cols() > 1, rho, prev_positions};
  for (Eigen::Index i = 0; i < prior.size(); ++i) {
    if (wbar[i] <= 0.0) continue;
    if (!(lik.values[i] > 0.0))
      throw SupportViolation("zero likelihood at a weighted particle");
    ctx.y[i] = std::log(lik.values[i]);
  }
  return ctx.eval(pack_sensor_parameters(theta), grad);
}

FitResult fit_sensors(const ParticleSet& prior, const Vector& w_opt, const Layer2Config& cfg,
                      const RngStream& rng, const DiscrepancySpec* metric,
                      const ParticleSet* target, double epsilon) {
  validate(prior);
  if (cfg.sensors < 1 || cfg.restarts < 1 || cfg.rho < 0.0)
    throw ConfigError("need sensors >= 1, restarts >= 1, rho >= 0");
  if (cfg.sensors > prior.size()) throw ConfigError("more sensors than particles");
  const Eigen::Index d = prior.dim();
  const Eigen::Index r = cfg.sensors;
  PointMatrix prev = PointMatrix::Zero(r, d);
  if (cfg.rho > 0.0) {
    if (!cfg.prev_positions || cfg.prev_positions->rows() != r || cfg.prev_positions->cols() != d)
      throw ConfigError("rho > 0 requires matching previous positions");
    prev = *cfg.prev_positions;
  }

  const ParticleLikelihood lik = recover_likelihood(w_opt, prior);
  const Vector wbar = normalize(w_opt);

  FitContext ctx{prior.points, Vector::Zero(prior.size()), wbar, cfg.sensors,
                 cfg.diagonal_bandwidths, cfg.rho, prev};
  for (Eigen::Index i = 0; i < prior.size(); ++i)
    if (wbar[i] > 0.0) ctx.y[i] = std::log(lik.values[i]);

  // Deterministic initialization: per-coordinate weighted medians anchor the
  // layout, sensors spread at quantiles (r - 1/2)/R along the axis of
  // largest weighted variance, Silverman bandwidth, uniform logits.
  ParticleSet weighted{prior.points, wbar};
  const Moments mom = weighted_mean_and_second_moment(weighted);
  Matrix cov = mom.covariance();
  cov.diagonal() = cov.diagonal().cwiseMax(1e-12);
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  const Vector axis = es.eigenvectors().col(d - 1);

  Vector median(d);
  for (Eigen::Index c = 0; c < d; ++c)
    median[c] = weighted_quantile(prior.points.col(c), wbar, 0.5);
  Vector proj(prior.size());
  for (Eigen::Index i = 0; i < prior.size(); ++i)
    proj[i] = axis.dot(prior.points.row(i).transpose() - median);

  const double h0 = std::max(silverman_bandwidth(prior.points, wbar), 1e-6);
  const Eigen::Index b = cfg.diagonal_bandwidths ? d : 1;
  PointMatrix pos0(r, d);
  for (Eigen::Index s = 0; s < r; ++s) {
    const double q = weighted_quantile(proj, wbar, (s + 0.5) / static_cast<double>(r));
    pos0.row(s) = (median + q * axis).transpose();
  }
  SensorConfig init = sensor_config_from_unconstrained(
      pos0, Vector::Zero(r), Matrix::Constant(r, b, std::log(h0)));
  const Vector theta0 = pack_sensor_parameters(init);

  auto value_and_grad = [&ctx](const Vector& theta, Vector& grad) {
    return ctx.eval(theta, &grad);
  };
  auto solve_from = [&](const Vector& x0) {
    return quasi_newton_minimize(value_and_grad, x0, cfg.solver);
  };
  auto perturb = [&](const Vector& base, int, RngStream& stream) {
    Vector out = base;
    for (Eigen::Index i = 0; i < r * d; ++i) out[i] += cfg.position_sigma * stream.normal();
    for (Eigen::Index i = r * d + r; i < out.size(); ++i)
      out[i] += cfg.log_bandwidth_sigma * stream.normal();
    return out;
  };
  const MultiStartResult ms = multi_start(solve_from, theta0, perturb, cfg.restarts, rng);

  FitResult out;
  out.config = unpack_sensor_parameters(ms.best.x, d, cfg.sensors, cfg.diagonal_bandwidths);
  out.fitting_error = ms.best.value;
  out.restart_errors = ms.restart_values;
  out.best_restart = ms.best_restart;

  const Vector loglx = log_sensor_likelihood_all(out.config, prior.points);
  Vector raw = Vector::Zero(prior.size());
  double shift = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < prior.size(); ++i)
    if (prior.weights[i] > 0.0)
      shift = std::max(shift, std::log(prior.weights[i]) + loglx[i]);
  for (Eigen::Index i = 0; i < prior.size(); ++i)
    if (prior.weights[i] > 0.0)
      raw[i] = std::exp(std::log(prior.weights[i]) + loglx[i] - shift);
  out.realized_weights = normalize(raw);

  if (metric != nullptr && target != nullptr) {
    ParticleSet realized{prior.points, out.realized_weights};
    // The smoothed transport evaluator carries an upward entropic bias that
    // would swamp small realizability gaps; in one dimension the quantile
    // form gives the distance exactly.
    const auto* ws = std::get_if<WassersteinSpec>(&metric->variant());
    if (ws != nullptr && prior.dim() == 1)
      out.realized_discrepancy =
          wasserstein_1d_exact(prior.points.col(0), out.realized_weights,
                               target->points.col(0), target->weights, ws->p);
    else
      out.realized_discrepancy = evaluate(*metric, realized, *target);
    out.realizability_gap = out.realized_discrepancy - epsilon;
  }
  return out;
}

double realizability_gap(const ParticleSet& realized, const ParticleSet& target,
                         const DiscrepancySpec& spec, double epsilon) {
  return evaluate(spec, realized, target) - epsilon;
}

json fit_result_to_json(const FitResult& fr) {
  json j;
  j["config"] = sensor_config_to_json(fr.config);
  j["fitting_error"] = fr.fitting_error;
  json w = json::array();
  for (Eigen::Index i = 0; i < fr.realized_weights.size(); ++i) w.push_back(fr.realized_weights[i]);
  j["realized_weights"] = w;
  j["realized_discrepancy"] = fr.realized_discrepancy;
  j["realizability_gap"] = fr.realizability_gap;
  j["restart_errors"] = fr.restart_errors;
  j["best_restart"] = fr.best_restart;
  return j;
}

}  // namespace lisyn
