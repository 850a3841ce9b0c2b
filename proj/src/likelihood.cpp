#include "lisyn/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "lisyn/detail/lse.hpp"
#include "lisyn/errors.hpp"
#include "lisyn/kernels.hpp"

namespace lisyn {

using detail::row_lse;
using detail::vec_lse;

ParticleLikelihood recover_likelihood(const Vector& w_opt, const ParticleSet& prior) {
  validate(prior);
  if (w_opt.size() != prior.size())
    throw DimensionMismatch("posterior weights do not match the prior");
  if (!w_opt.allFinite() || (w_opt.array() < 0.0).any())
    throw NonFinite("posterior weights must be finite and nonnegative");

  Vector ratio = Vector::Zero(prior.size());
  for (Eigen::Index i = 0; i < prior.size(); ++i) {
    if (prior.weights[i] > 0.0)
      ratio[i] = w_opt[i] / prior.weights[i];
    else if (w_opt[i] > 0.0)
      throw SupportViolation("posterior mass outside the prior support");
  }
  const double peak = ratio.maxCoeff();
  if (!(peak > 0.0)) throw AllZero("posterior carries no mass");
  ParticleLikelihood lik;
  lik.values = ratio / peak;
  lik.support = prior;
  return lik;
}

Vector bayes_update(const Vector& prior_weights, const Vector& likelihood) {
  if (prior_weights.size() != likelihood.size())
    throw DimensionMismatch("likelihood length does not match weights");
  if (!likelihood.allFinite() || (likelihood.array() < 0.0).any())
    throw NonFinite("likelihood values must be finite and nonnegative");
  return normalize(prior_weights.cwiseProduct(likelihood));
}

// ---------------------------------------------------------------------------
// Sensor mixtures
// ---------------------------------------------------------------------------

SensorConfig sensor_config_from_unconstrained(const PointMatrix& positions, const Vector& logits,
                                              const Matrix& log_bandwidths) {
  const Eigen::Index r = positions.rows();
  const Eigen::Index d = positions.cols();
  if (logits.size() != r) throw DimensionMismatch("one logit per sensor required");
  if (log_bandwidths.rows() != r || (log_bandwidths.cols() != 1 && log_bandwidths.cols() != d))
    throw DimensionMismatch("bandwidths must have one or d columns per sensor");
  if (!positions.allFinite() || !logits.allFinite() || !log_bandwidths.allFinite())
    throw NonFinite("sensor parameters must be finite");

  SensorConfig cfg;
  cfg.positions = positions;
  cfg.logits = logits;
  cfg.log_bandwidths = log_bandwidths;
  Vector shifted = logits.array() - logits.maxCoeff();
  shifted = shifted.array().exp();
  cfg.alphas = shifted / shifted.sum();
  cfg.bandwidths = log_bandwidths.array().exp();
  return cfg;
}

namespace {

// Negative kernel exponents q_ir = ||x_i - s_r||^2 / (2 h_r^2), with the
// norm taken per coordinate when bandwidths carry d columns.
Matrix kernel_exponents(const SensorConfig& cfg, const PointMatrix& pts) {
  const Eigen::Index r = cfg.sensor_count();
  Matrix q(pts.rows(), r);
  if (cfg.bandwidths.cols() == 1) {
    const Matrix sq = cost_matrix(pts, cfg.positions, 2.0);
    for (Eigen::Index s = 0; s < r; ++s) {
      const double h2 = 2.0 * cfg.bandwidths(s, 0) * cfg.bandwidths(s, 0);
      q.col(s) = sq.col(s) / h2;
    }
  } else {
    for (Eigen::Index s = 0; s < r; ++s) {
      Matrix diff = pts;
      diff.rowwise() -= cfg.positions.row(s);
      for (Eigen::Index c = 0; c < pts.cols(); ++c) diff.col(c) /= cfg.bandwidths(s, c);
      q.col(s) = 0.5 * diff.rowwise().squaredNorm();
    }
  }
  return q;
}

Vector log_alphas(const SensorConfig& cfg) {
  return (cfg.logits.array() - vec_lse(cfg.logits)).matrix();
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw ConfigError("expected a nonempty array of rows");
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = static_cast<Eigen::Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const json& row = j.at(static_cast<std::size_t>(i));
    if (static_cast<Eigen::Index>(row.size()) != cols)
      throw ConfigError("ragged matrix rows");
    for (Eigen::Index c = 0; c < cols; ++c)
      m(i, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

Vector vector_from_json(const json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i)
    v[i] = j.at(static_cast<std::size_t>(i)).get<double>();
  return v;
}

json vector_to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

}  // namespace

double log_sensor_likelihood(const SensorConfig& cfg, const Vector& x) {
  if (x.size() != cfg.positions.cols()) throw DimensionMismatch("query dimension mismatch");
  PointMatrix one(1, x.size());
  one.row(0) = x;
  const Matrix q = kernel_exponents(cfg, one);
  const Vector terms = log_alphas(cfg) - q.row(0).transpose();
  return vec_lse(terms);
}

double eval_sensor_likelihood(const SensorConfig& cfg, const Vector& x) {
  return std::exp(log_sensor_likelihood(cfg, x));
}

Vector log_sensor_likelihood_all(const SensorConfig& cfg, const PointMatrix& pts) {
  if (pts.cols() != cfg.positions.cols()) throw DimensionMismatch("query dimension mismatch");
  const Matrix negq = -kernel_exponents(cfg, pts);
  Vector out(pts.rows());
  row_lse(negq, log_alphas(cfg), out);
  return out;
}

json sensor_config_to_json(const SensorConfig& cfg) {
  json j;
  j["positions"] = matrix_to_json(cfg.positions);
  j["alphas"] = vector_to_json(cfg.alphas);
  j["bandwidths"] = matrix_to_json(cfg.bandwidths);
  j["logits"] = vector_to_json(cfg.logits);
  j["log_bandwidths"] = matrix_to_json(cfg.log_bandwidths);
  return j;
}

SensorConfig sensor_config_from_json(const json& j) {
  const Matrix pos = matrix_from_json(j.at("positions"));
  const Vector logits = vector_from_json(j.at("logits"));
  const Matrix logbw = matrix_from_json(j.at("log_bandwidths"));
  PointMatrix positions = pos;
  // Rebuild the derived fields so softmax/exp consistency holds exactly.
  return sensor_config_from_unconstrained(positions, logits, logbw);
}

void write_sensor_config_csv(const SensorConfig& cfg, const std::string& path) {
  std::string out;
  const Eigen::Index d = cfg.positions.cols();
  for (Eigen::Index c = 0; c < d; ++c) out += "s_" + std::to_string(c) + ",";
  out += "alpha";
  for (Eigen::Index c = 0; c < cfg.bandwidths.cols(); ++c) out += ",h_" + std::to_string(c);
  out += "\n";
  for (Eigen::Index r = 0; r < cfg.sensor_count(); ++r) {
    for (Eigen::Index c = 0; c < d; ++c) out += format_double(cfg.positions(r, c)) + ",";
    out += format_double(cfg.alphas[r]);
    for (Eigen::Index c = 0; c < cfg.bandwidths.cols(); ++c)
      out += "," + format_double(cfg.bandwidths(r, c));
    out += "\n";
  }
  write_text_file(path, out);
}

json particle_likelihood_to_json(const ParticleLikelihood& lik) {
  json j;
  j["values"] = vector_to_json(lik.values);
  j["support"] = particles_to_json(lik.support);
  return j;
}

// ---------------------------------------------------------------------------
// Gaussian-mixture distillation
// ---------------------------------------------------------------------------

double GaussianMixtureLikelihood::log_density(const Vector& x) const {
  const Eigen::Index m = alphas.size();
  Vector terms(m);
  const double c = -0.5 * static_cast<double>(x.size()) * std::log(2.0 * M_PI);
  for (Eigen::Index k = 0; k < m; ++k) {
    const Eigen::LLT<Matrix> llt(components[static_cast<std::size_t>(k)].covariance);
    if (llt.info() != Eigen::Success) throw NotSpd("mixture covariance is not positive definite");
    const Matrix l = llt.matrixL();
    const Vector z = l.triangularView<Eigen::Lower>().solve(
        x - components[static_cast<std::size_t>(k)].mean);
    terms[k] = std::log(alphas[k]) + c - l.diagonal().array().log().sum() -
               0.5 * z.squaredNorm();
  }
  return vec_lse(terms);
}

namespace {

struct GmmLayout {
  int m = 1;           // components
  Eigen::Index d = 1;  // state dimension
  Eigen::Index chol = 1;

  Eigen::Index params() const { return m + m * d + m * chol; }
};

// theta = [logits | means | per-component Cholesky (log diagonal, then
// strict lower rows)].
GaussianMixtureLikelihood unpack_gmm(const Vector& theta, const GmmLayout& lay) {
  GaussianMixtureLikelihood g;
  g.alphas.resize(lay.m);
  Vector shifted = theta.head(lay.m).array() - theta.head(lay.m).maxCoeff();
  shifted = shifted.array().exp();
  g.alphas = shifted / shifted.sum();
  Eigen::Index off = lay.m;
  for (int k = 0; k < lay.m; ++k) {
    GaussianComponent comp;
    comp.mean = theta.segment(off, lay.d);
    off += lay.d;
    Matrix l = Matrix::Zero(lay.d, lay.d);
    for (Eigen::Index c = 0; c < lay.d; ++c) l(c, c) = std::exp(theta[off + c]);
    Eigen::Index p = off + lay.d;
    for (Eigen::Index i = 1; i < lay.d; ++i)
      for (Eigen::Index jc = 0; jc < i; ++jc) l(i, jc) = theta[p++];
    off += lay.chol;
    comp.covariance = l * l.transpose();
    g.components.push_back(std::move(comp));
  }
  return g;
}

// Log mixture density at every particle, written against the unpacked
// Cholesky factors directly so huge exponents stay in the log domain.
Vector log_gmm_all(const Vector& theta, const GmmLayout& lay, const PointMatrix& pts) {
  const Eigen::Index n = pts.rows();
  Matrix terms(n, lay.m);
  Vector logits = theta.head(lay.m);
  const double logz = vec_lse(logits);
  const double c = -0.5 * static_cast<double>(lay.d) * std::log(2.0 * M_PI);
  Eigen::Index off = lay.m;
  for (int k = 0; k < lay.m; ++k) {
    const Vector mean = theta.segment(off, lay.d);
    off += lay.d;
    Matrix l = Matrix::Zero(lay.d, lay.d);
    double logdet = 0.0;
    for (Eigen::Index cc = 0; cc < lay.d; ++cc) {
      l(cc, cc) = std::exp(theta[off + cc]);
      logdet += theta[off + cc];
    }
    Eigen::Index p = off + lay.d;
    for (Eigen::Index i = 1; i < lay.d; ++i)
      for (Eigen::Index jc = 0; jc < i; ++jc) l(i, jc) = theta[p++];
    off += lay.chol;
    const double head = (logits[k] - logz) + c - logdet;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector z =
          l.triangularView<Eigen::Lower>().solve(pts.row(i).transpose() - mean);
      terms(i, k) = head - 0.5 * z.squaredNorm();
    }
  }
  Vector out(n);
  row_lse(terms, Vector::Zero(lay.m), out);
  return out;
}

}  // namespace

DistillResult distill_gmm(const ParticleLikelihood& lik, const Vector& fit_weights,
                          const DistillConfig& cfg, const RngStream& rng) {
  validate(lik.support);
  if (cfg.component_count < 1) throw ConfigError("need at least one mixture component");
  if (cfg.restarts < 1) throw ConfigError("need at least one restart");
  if (fit_weights.size() != lik.values.size())
    throw DimensionMismatch("fit weights do not match likelihood values");
  const Vector wbar = normalize(fit_weights);
  for (Eigen::Index i = 0; i < wbar.size(); ++i)
    if (wbar[i] > 0.0 && !(lik.values[i] > 0.0))
      throw SupportViolation("zero likelihood at a weighted particle");

  const PointMatrix& pts = lik.support.points;
  GmmLayout lay;
  lay.m = cfg.component_count;
  lay.d = pts.cols();
  lay.chol = lay.d * (lay.d + 1) / 2;

  Vector y = Vector::Zero(wbar.size());
  for (Eigen::Index i = 0; i < wbar.size(); ++i)
    if (wbar[i] > 0.0) y[i] = std::log(lik.values[i]);

  const double ybar = wbar.dot(y);
  const double yvar = wbar.dot((y.array() - ybar).square().matrix());
  const bool flat = yvar < 1e-10;

  auto objective = [&](const Vector& theta) {
    const Vector logg = log_gmm_all(theta, lay, pts);
    Vector r = y - logg;
    if (cfg.center_residuals) r.array() -= wbar.dot(r);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < r.size(); ++i)
      if (wbar[i] > 0.0) acc += wbar[i] * r[i] * r[i];
    return acc;
  };
  auto value_and_grad = [&](const Vector& theta, Vector& grad) {
    grad.resize(theta.size());
    Vector probe = theta;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      const double h = 1e-5 * (1.0 + std::abs(theta[i]));
      probe[i] = theta[i] + h;
      const double fp = objective(probe);
      probe[i] = theta[i] - h;
      const double fm = objective(probe);
      probe[i] = theta[i];
      grad[i] = (fp - fm) / (2.0 * h);
    }
    return objective(theta);
  };

  // Initialization: means along the dominant weighted-variance axis at even
  // quantiles, shared covariance from the weighted moments.
  ParticleSet weighted{pts, wbar};
  const Moments mom = weighted_mean_and_second_moment(weighted);
  Matrix cov = mom.covariance();
  cov.diagonal() = cov.diagonal().cwiseMax(1e-8);
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  const Vector axis = es.eigenvectors().col(lay.d - 1);
  Vector proj(pts.rows());
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    proj[i] = axis.dot(pts.row(i).transpose() - mom.mean);

  Matrix comp_cov = cov / std::pow(double(lay.m), 2.0 / double(lay.d));
  comp_cov.diagonal() = comp_cov.diagonal().cwiseMax(1e-8);
  const Eigen::LLT<Matrix> llt(comp_cov);
  if (llt.info() != Eigen::Success) throw NotSpd("weighted covariance is not positive definite");
  const Matrix l0 = llt.matrixL();

  Vector theta0 = Vector::Zero(lay.params());
  Eigen::Index off = lay.m;
  for (int k = 0; k < lay.m; ++k) {
    const double q = (lay.m == 1) ? 0.5 : (k + 0.5) / double(lay.m);
    theta0.segment(off, lay.d) = mom.mean + weighted_quantile(proj, wbar, q) * axis;
    off += lay.d;
    for (Eigen::Index c = 0; c < lay.d; ++c) theta0[off + c] = std::log(l0(c, c));
    Eigen::Index p = off + lay.d;
    for (Eigen::Index i = 1; i < lay.d; ++i)
      for (Eigen::Index jc = 0; jc < i; ++jc) theta0[p++] = l0(i, jc);
    off += lay.chol;
  }

  const Vector coord_sd = cov.diagonal().array().sqrt().max(1e-3);
  auto perturb = [&](const Vector& init, int, RngStream& stream) {
    Vector out = init;
    Eigen::Index o = lay.m;
    for (int k = 0; k < lay.m; ++k) {
      out[k] += 0.25 * stream.normal();
      for (Eigen::Index c = 0; c < lay.d; ++c) out[o + c] += coord_sd[c] * stream.normal();
      for (Eigen::Index c = 0; c < lay.d; ++c) out[o + lay.d + c] += 0.4 * stream.normal();
      o += lay.d + lay.chol;
    }
    return out;
  };
  auto solve_from = [&](const Vector& x0) {
    return quasi_newton_minimize(value_and_grad, x0, cfg.solver);
  };

  const MultiStartResult ms = multi_start(solve_from, theta0, perturb, cfg.restarts, rng);

  DistillResult out;
  out.model = unpack_gmm(ms.best.x, lay);
  out.objective = ms.best.value;
  out.flat_likelihood = flat;
  out.restart_values = ms.restart_values;
  out.best_restart = ms.best_restart;
  return out;
}

}  // namespace lisyn
