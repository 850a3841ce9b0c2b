#include "lisyn/discrepancy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "lisyn/detail/anderson.hpp"
#include "lisyn/detail/lse.hpp"
#include "lisyn/errors.hpp"

namespace lisyn {

using detail::col_lse;
using detail::row_lse;

double resolve_eta(const Matrix& cost, const SinkhornOptions& opt) {
  if (opt.eta_abs) {
    if (!(*opt.eta_abs > 0.0)) throw ConfigError("sinkhorn eta must be positive");
    return *opt.eta_abs;
  }
  const double mean_c = cost.mean();
  // Identical supports make mean(C) = 0; any positive eta gives the exact
  // (zero-cost) answer, so pick an arbitrary unit scale.
  const double eta = opt.eta_rel * (mean_c > 0.0 ? mean_c : 1.0);
  if (!(eta > 0.0)) throw ConfigError("sinkhorn eta must be positive");
  return eta;
}

namespace {

struct Dense {
  std::vector<Eigen::Index> idx;
  Vector w;
};

Dense drop_zeros(const Vector& w) {
  Dense d;
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (w[i] > 0.0) d.idx.push_back(i);
  d.w.resize(static_cast<Eigen::Index>(d.idx.size()));
  for (Eigen::Index k = 0; k < d.w.size(); ++k) d.w[k] = w[d.idx[k]];
  return d;
}

}  // namespace

TransportPlan sinkhorn_plan(const Vector& w, const Vector& v, const Matrix& cost, double eta,
                            double marginal_tol, int max_iter) {
  if (w.size() != cost.rows() || v.size() != cost.cols())
    throw DimensionMismatch("marginals do not match cost matrix");
  if (!w.allFinite() || !v.allFinite() || (w.array() < 0).any() || (v.array() < 0).any())
    throw NonFinite("marginals must be finite and nonnegative");
  if (std::abs(w.sum() - 1.0) > kSimplexTol || std::abs(v.sum() - 1.0) > kSimplexTol)
    throw Error("marginals must sum to one");
  if (!(eta > 0.0)) throw ConfigError("sinkhorn eta must be positive");

  // Zero-mass atoms receive zero plan rows/columns; iterate on the rest.
  const Dense dw = drop_zeros(w);
  const Dense dv = drop_zeros(v);
  Matrix c(dw.w.size(), dv.w.size());
  for (Eigen::Index i = 0; i < dw.w.size(); ++i)
    for (Eigen::Index j = 0; j < dv.w.size(); ++j) c(i, j) = cost(dw.idx[i], dv.idx[j]);

  const Matrix g = -c / eta;
  const Vector logw = dw.w.array().log();
  const Vector logv = dv.w.array().log();

  Vector loga = Vector::Zero(dw.w.size());
  Vector logb = Vector::Zero(dv.w.size());
  Vector lse(dw.w.size()), lsec(dv.w.size());

  auto sweeps = [&](const Matrix& kmat, double tol, int iters) {
    double residual = std::numeric_limits<double>::infinity();
    row_lse(kmat, logb, lse);
    detail::AndersonMixer mix(logb.size(), 5);
    double best = std::numeric_limits<double>::infinity();
    for (int it = 0; it < iters; ++it) {
      loga = logw - lse;
      col_lse(kmat, loga, lsec);
      const Vector tb = logv - lsec;
      // Columns are exact after the b-update; check the row marginals.
      row_lse(kmat, tb, lse);
      residual = ((loga + lse).array().exp() - dw.w.array()).abs().sum();
      if (residual <= tol) {
        logb = tb;
        break;
      }
      if (residual < best) best = residual;
      const Vector prop = mix.propose(logb, tb);
      if (!prop.allFinite() || residual > 10.0 * best) {
        mix.reset();
        best = residual;
        logb = tb;  // lse already matches tb
      } else {
        logb = prop;
        row_lse(kmat, logb, lse);
      }
    }
    return residual;
  };

  double residual = sweeps(g, marginal_tol, 500);
  if (!(residual <= marginal_tol)) {
    // Far-apart clustered marginals converge slowly at small eta; anneal the
    // regularizer from ~cmax/3 down to eta, doubling the potentials as eta
    // halves, so every stage starts warm.
    const double cmax = c.maxCoeff();
    int stages = 0;
    while (eta * std::ldexp(1.0, stages + 1) < cmax / 3.0 && stages < 40) ++stages;
    loga.setZero();
    logb.setZero();
    Matrix ks;
    for (int s = stages; s >= 1; --s) {
      ks = g / std::ldexp(1.0, s);
      sweeps(ks, 1e-4, 500);
      loga *= 2.0;
      logb *= 2.0;
    }
    residual = sweeps(g, marginal_tol, max_iter);
  }
  if (residual > marginal_tol)
    throw NoConvergence("sinkhorn marginal residual " + std::to_string(residual) +
                        " after max iterations");

  Matrix dense_plan =
      ((g.colwise() + loga).rowwise() + logb.transpose()).array().exp().matrix();
  TransportPlan plan;
  plan.cost = (dense_plan.array() * c.array()).sum();
  plan.gamma = Matrix::Zero(w.size(), v.size());
  for (Eigen::Index i = 0; i < dw.w.size(); ++i)
    for (Eigen::Index j = 0; j < dv.w.size(); ++j)
      plan.gamma(dw.idx[i], dv.idx[j]) = dense_plan(i, j);
  return plan;
}

double wasserstein_sinkhorn(const ParticleSet& a, const ParticleSet& b, double p,
                            const SinkhornOptions& opt) {
  validate(a);
  validate(b);
  const Matrix c = cost_matrix(a.points, b.points, p);
  const double eta = resolve_eta(c, opt);
  const TransportPlan plan = sinkhorn_plan(a.weights, b.weights, c, eta, opt.marginal_tol,
                                           opt.max_iter);
  return std::pow(std::max(plan.cost, 0.0), 1.0 / p);
}

double wasserstein_1d_exact(const Vector& xa, const Vector& wa, const Vector& xb,
                            const Vector& wb, double p) {
  if (xa.size() != wa.size() || xb.size() != wb.size())
    throw DimensionMismatch("support/weight length mismatch");
  if (!(p > 0.0)) throw ConfigError("order p must be positive");
  const Vector na = normalize(wa);
  const Vector nb = normalize(wb);

  std::vector<Eigen::Index> oa(xa.size()), ob(xb.size());
  std::iota(oa.begin(), oa.end(), Eigen::Index{0});
  std::iota(ob.begin(), ob.end(), Eigen::Index{0});
  std::stable_sort(oa.begin(), oa.end(), [&](auto i, auto j) { return xa[i] < xa[j]; });
  std::stable_sort(ob.begin(), ob.end(), [&](auto i, auto j) { return xb[i] < xb[j]; });

  // Monotone coupling: walk both cumulative distributions through their
  // merged breakpoints.
  double cost = 0.0, cum = 0.0;
  double ca = na[oa[0]], cb = nb[ob[0]];
  std::size_t i = 0, j = 0;
  while (true) {
    const double next = std::min(ca, cb);
    const double mass = next - cum;
    if (mass > 0.0)
      cost += mass * std::pow(std::abs(xa[oa[i]] - xb[ob[j]]), p);
    cum = next;
    const bool advance_a = (ca <= cb);
    const bool advance_b = (cb <= ca);
    if (advance_a) {
      if (++i >= oa.size()) break;
      ca += na[oa[i]];
    }
    if (advance_b) {
      if (++j >= ob.size()) break;
      cb += nb[ob[j]];
    }
  }
  return std::pow(cost, 1.0 / p);
}

double mmd_squared(const Vector& w, const Vector& v, const KernelMatrices& k, Vector* grad) {
  if (k.kxx.rows() != w.size() || k.kxz.rows() != w.size() || k.kxz.cols() != v.size() ||
      k.kzz.rows() != v.size())
    throw DimensionMismatch("kernel matrices do not match weight lengths");
  const Vector kxx_w = k.kxx.selfadjointView<Eigen::Lower>() * w;
  const Vector kxz_v = k.kxz * v;
  const double val = w.dot(kxx_w) - 2.0 * w.dot(kxz_v) + v.dot(k.kzz * v);
  if (grad) *grad = 2.0 * (kxx_w - kxz_v);
  return val;
}

double mmd(const ParticleSet& a, const ParticleSet& b, const KernelSpec& kernel) {
  validate(a);
  validate(b);
  const KernelMatrices k = kernel_matrices(a.points, b.points, kernel);
  return std::sqrt(std::max(mmd_squared(a.weights, b.weights, k), 0.0));
}

double chi_squared(const Vector& w, const Vector& vtilde) {
  if (w.size() != vtilde.size()) throw DimensionMismatch("weight length mismatch");
  if ((vtilde.array() <= 0.0).any())
    throw SupportViolation("chi-squared reference weights must be strictly positive");
  return ((w - vtilde).array().square() / vtilde.array()).sum();
}

Eigen::Index FeatureMap::feature_count(Eigen::Index d) const {
  switch (kind) {
    case Kind::Mean: return d;
    case Kind::MeanSecondMoment: return d + d * (d + 1) / 2;
    case Kind::Custom: return static_cast<Eigen::Index>(custom.size());
  }
  return 0;
}

Matrix feature_matrix(const FeatureMap& features, const PointMatrix& pts) {
  const Eigen::Index n = pts.rows(), d = pts.cols();
  const Eigen::Index q = features.feature_count(d);
  if (q == 0) throw ConfigError("feature map is empty");
  Matrix a(q, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector x = pts.row(i);
    Eigen::Index r = 0;
    switch (features.kind) {
      case FeatureMap::Kind::Mean:
        a.col(i) = x;
        break;
      case FeatureMap::Kind::MeanSecondMoment:
        a.col(i).head(d) = x;
        r = d;
        for (Eigen::Index s = 0; s < d; ++s)
          for (Eigen::Index t = s; t < d; ++t) a(r++, i) = x[s] * x[t];
        break;
      case FeatureMap::Kind::Custom:
        for (const auto& f : features.custom) a(r++, i) = f(x);
        break;
    }
  }
  return a;
}

double moment_sqnorm(const Vector& w, const Matrix& a, const Vector& b, Vector* grad) {
  if (a.cols() != w.size() || a.rows() != b.size())
    throw DimensionMismatch("feature matrix does not match weights");
  const Vector delta = a * w - b;
  if (grad) *grad = 2.0 * a.transpose() * delta;
  return delta.squaredNorm();
}

namespace {

double moment_norm_value(const Vector& delta, const MomentNorm& norm) {
  if (norm.kind == MomentNorm::Kind::L2) return delta.norm();
  if (norm.scales.size() != delta.size())
    throw DimensionMismatch("per-component scales do not match feature count");
  if ((norm.scales.array() <= 0.0).any())
    throw ConfigError("per-component scales must be positive");
  return (delta.array().abs() / norm.scales.array()).maxCoeff();
}

}  // namespace

double moment_discrepancy(const Vector& w, const PointMatrix& x, const Vector& v,
                          const PointMatrix& z, const FeatureMap& features,
                          const MomentNorm& norm) {
  if (x.cols() != z.cols()) throw DimensionMismatch("point dimensions differ");
  const Matrix ax = feature_matrix(features, x);
  const Matrix az = feature_matrix(features, z);
  const Vector delta = ax * w - az * v;
  return moment_norm_value(delta, norm);
}

DiscrepancySpec DiscrepancySpec::wasserstein(double p, SinkhornOptions opt) {
  if (!(p > 0.0)) throw ConfigError("order p must be positive");
  return DiscrepancySpec(Variant{WassersteinSpec{p, opt}});
}

DiscrepancySpec DiscrepancySpec::mmd_kernel(KernelSpec kernel) {
  if (!(kernel.bandwidth > 0.0)) throw ConfigError("kernel bandwidth must be positive");
  return DiscrepancySpec(Variant{MmdSpec{kernel}});
}

DiscrepancySpec DiscrepancySpec::chi_squared_smoothed(std::optional<double> sigma) {
  if (sigma && !(*sigma > 0.0)) throw ConfigError("smoothing bandwidth must be positive");
  return DiscrepancySpec(Variant{ChiSquaredSpec{sigma}});
}

DiscrepancySpec DiscrepancySpec::moments(FeatureMap features, MomentNorm norm) {
  if (features.kind == FeatureMap::Kind::Custom && features.custom.empty())
    throw ConfigError("custom feature map is empty");
  return DiscrepancySpec(Variant{MomentSpec{std::move(features), std::move(norm)}});
}

DiscrepancySpec DiscrepancySpec::hybrid(std::vector<HybridComponent> parts) {
  if (parts.empty()) throw ConfigError("hybrid metric needs at least one component");
  for (const auto& p : parts)
    if (!(p.weight > 0.0)) throw ConfigError("hybrid component weights must be positive");
  return DiscrepancySpec(Variant{HybridSpec{std::move(parts)}});
}

namespace {

double evaluate_leaf(const WassersteinSpec& s, const ParticleSet& post, const ParticleSet& tgt) {
  return wasserstein_sinkhorn(post, tgt, s.p, s.sinkhorn);
}

double evaluate_leaf(const MmdSpec& s, const ParticleSet& post, const ParticleSet& tgt) {
  return mmd(post, tgt, s.kernel);
}

double evaluate_leaf(const ChiSquaredSpec& s, const ParticleSet& post, const ParticleSet& tgt) {
  const double sigma =
      s.smoothing_sigma ? *s.smoothing_sigma : silverman_bandwidth(tgt.points, tgt.weights);
  const Vector vt = interpolate_target_weights(post.points, tgt, sigma);
  return chi_squared(post.weights, vt);
}

double evaluate_leaf(const MomentSpec& s, const ParticleSet& post, const ParticleSet& tgt) {
  return moment_discrepancy(post.weights, post.points, tgt.weights, tgt.points, s.features,
                            s.norm);
}

}  // namespace

double evaluate(const DiscrepancySpec& spec, const ParticleSet& posterior,
                const ParticleSet& target) {
  validate(posterior);
  validate(target);
  if (posterior.dim() != target.dim()) throw DimensionMismatch("point dimensions differ");
  return std::visit(
      [&](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, HybridSpec>) {
          double acc = 0.0;
          for (const auto& part : s.parts)
            acc += part.weight * std::visit(
                                     [&](const auto& leaf) {
                                       return evaluate_leaf(leaf, posterior, target);
                                     },
                                     part.metric);
          return acc;
        } else {
          return evaluate_leaf(s, posterior, target);
        }
      },
      spec.variant());
}

}  // namespace lisyn
