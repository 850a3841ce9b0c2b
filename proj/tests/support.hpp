#ifndef LISYN_TESTS_SUPPORT_HPP
#define LISYN_TESTS_SUPPORT_HPP

// Shared helpers for the test binaries: small random instances, finite
// difference gradients, and the exponential-tilt certificate for synthesis
// results.

#include <algorithm>
#include <cmath>
#include <functional>
#include <variant>

#include "lisyn/discrepancy.hpp"
#include "lisyn/kernels.hpp"
#include "lisyn/particles.hpp"
#include "lisyn/rng.hpp"
#include "lisyn/synthesis.hpp"

namespace testutil {

using lisyn::Matrix;
using lisyn::ParticleSet;
using lisyn::PointMatrix;
using lisyn::Vector;

inline ParticleSet random_cloud(lisyn::RngStream& rng, Eigen::Index n, int dim,
                                double center = 0.0, double spread = 1.0) {
  PointMatrix pts(n, dim);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int d = 0; d < dim; ++d) pts(i, d) = center + spread * rng.normal();
  // Weights bounded away from zero so log-ratios stay well conditioned.
  Vector w(n);
  for (Eigen::Index i = 0; i < n; ++i) w[i] = 0.2 + rng.uniform();
  w /= w.sum();
  return ParticleSet{pts, w};
}

// Plain central difference in ambient coordinates.
inline Vector fd_gradient(const Vector& x, const std::function<double(const Vector&)>& f,
                          double h = 1e-6) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

// Central difference of f along renormalized single-atom bumps.  The
// renormalization keeps the argument on the simplex and shifts every gradient
// component by the same constant <g, w>, which the tilt check absorbs.
inline Vector fd_simplex_gradient(const Vector& w, const std::function<double(const Vector&)>& f,
                                  double h = 1e-6) {
  Vector g = Vector::Zero(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (w[i] <= 1e-8) continue;
    const double hi = std::min(h, 0.5 * w[i]);
    Vector wp = w, wm = w;
    wp[i] += hi;
    wm[i] -= hi;
    wp /= wp.sum();
    wm /= wm.sum();
    g[i] = (f(wp) - f(wm)) / (2.0 * hi);
  }
  return g;
}

// Row potential of the balanced entropic plan between (w, v): the gradient of
//   V(w) = min_{plan marginals (w, v)} <C, plan> + eta H(plan)
// with respect to w, up to an additive constant.  Plain log-domain alternating
// projections run to machine precision; deliberately shares no code with the
// library's transport solvers.
inline Vector entropic_row_potential(const Vector& w, const Vector& v, const Matrix& c,
                                     double eta) {
  const Eigen::Index n = w.size(), m = v.size();
  const Matrix g = -c / eta;
  const Vector logw = w.array().max(1e-300).log().matrix();
  const Vector logv = v.array().max(1e-300).log().matrix();
  Vector loga = Vector::Zero(n), logb = Vector::Zero(m), lser(n), lsec(m);
  for (int it = 0; it < 2000000; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double mx = -1e300;
      for (Eigen::Index j = 0; j < m; ++j) mx = std::max(mx, g(i, j) + logb[j]);
      double s = 0.0;
      for (Eigen::Index j = 0; j < m; ++j) s += std::exp(g(i, j) + logb[j] - mx);
      lser[i] = mx + std::log(s);
    }
    loga = logw - lser;
    for (Eigen::Index j = 0; j < m; ++j) {
      double mx = -1e300;
      for (Eigen::Index i = 0; i < n; ++i) mx = std::max(mx, g(i, j) + loga[i]);
      double s = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) s += std::exp(g(i, j) + loga[i] - mx);
      lsec[j] = mx + std::log(s);
    }
    const Vector nb = logv - lsec;
    const double move = (nb - logb).cwiseAbs().maxCoeff();
    logb = nb;
    if (move < 1e-15 && it > 10) break;
  }
  return eta * loga;
}

// Max deviation from constancy of log(w_i/wp_i) + tilt_i over atoms carrying
// meaningful mass.
inline double tilt_deviation(const Vector& wopt, const Vector& wprior, const Vector& tilt) {
  double sum = 0.0;
  int n = 0;
  Vector t(wopt.size());
  for (Eigen::Index i = 0; i < wopt.size(); ++i) {
    if (wopt[i] <= 1e-8) continue;
    t[n] = std::log(wopt[i] / wprior[i]) + tilt[i];
    sum += t[n];
    ++n;
  }
  if (n == 0) return 0.0;
  const double mean = sum / n;
  double dev = 0.0;
  for (int k = 0; k < n; ++k) dev = std::max(dev, std::abs(t[k] - mean));
  return dev;
}

// Exponential-tilt certificate: recovers the constraint gradient at the
// synthesized optimum from the problem data alone and reports how far
// log(w_i/wp_i) + lambda* g_i is from constant.  The gradient is taken of the
// penalized form each variant's stationarity condition uses: transported cost
// plus entropy at the solver's effective temperature for Wasserstein, squared
// MMD, chi-squared against the interpolated target, squared feature residual
// for the Euclidean moment norm, the feature map paired with the component
// multipliers for the weighted-sup norm, and the combined distance for
// hybrids.
inline double tilt_certificate(const lisyn::SynthesisProblem& prob,
                               const lisyn::SynthesisResult& res) {
  using namespace lisyn;
  const Vector& w = res.weights;
  const Vector& wp = prob.prior.weights;
  const double lambda = res.multiplier;
  if (lambda == 0.0) return tilt_deviation(w, wp, Vector::Zero(w.size()));

  const auto& var = prob.metric.variant();
  if (const auto* ws = std::get_if<WassersteinSpec>(&var)) {
    const Matrix c = cost_matrix(prob.prior.points, prob.target.points, ws->p);
    const double eta = resolve_eta(c, ws->sinkhorn);
    const Vector pot = entropic_row_potential(w, prob.target.weights, c, eta / lambda);
    return tilt_deviation(w, wp, lambda * pot);
  }
  if (const auto* ms = std::get_if<MmdSpec>(&var)) {
    const KernelMatrices km = kernel_matrices(prob.prior.points, prob.target.points, ms->kernel);
    auto f = [&](const Vector& u) { return mmd_squared(u, prob.target.weights, km); };
    return tilt_deviation(w, wp, lambda * fd_simplex_gradient(w, f));
  }
  if (const auto* cs = std::get_if<ChiSquaredSpec>(&var)) {
    const double sigma = cs->smoothing_sigma
                             ? *cs->smoothing_sigma
                             : silverman_bandwidth(prob.target.points, prob.target.weights);
    const Vector vt = interpolate_target_weights(prob.prior.points, prob.target, sigma);
    auto f = [&](const Vector& u) { return chi_squared(u, vt); };
    return tilt_deviation(w, wp, lambda * fd_simplex_gradient(w, f));
  }
  if (const auto* mo = std::get_if<MomentSpec>(&var)) {
    const Matrix a = feature_matrix(mo->features, prob.prior.points);
    const Vector b = feature_matrix(mo->features, prob.target.points) * prob.target.weights;
    if (mo->norm.kind == MomentNorm::Kind::PerComponent)
      return tilt_deviation(w, wp, a.transpose() * res.component_multipliers);
    auto f = [&](const Vector& u) { return moment_sqnorm(u, a, b); };
    return tilt_deviation(w, wp, lambda * fd_simplex_gradient(w, f));
  }
  auto f = [&](const Vector& u) {
    return evaluate(prob.metric, ParticleSet{prob.prior.points, u}, prob.target);
  };
  return tilt_deviation(w, wp, lambda * fd_simplex_gradient(w, f));
}

}  // namespace testutil

#endif  // LISYN_TESTS_SUPPORT_HPP
