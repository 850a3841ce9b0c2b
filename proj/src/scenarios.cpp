#include "lisyn/scenarios.hpp"

#include <cmath>

#include "lisyn/errors.hpp"

namespace lisyn {

namespace {

void check_mixture(const MixtureSpec& spec) {
  if (spec.components.empty()) throw ConfigError("mixture needs at least one component");
  double total = 0.0;
  const Eigen::Index d = spec.dim();
  for (const MixtureComponent& c : spec.components) {
    if (c.mean.size() != d || c.std.size() != d)
      throw DimensionMismatch("mixture components disagree on dimension");
    if (!(c.weight >= 0.0) || !((c.std.array() > 0.0).all()))
      throw ConfigError("mixture weights must be nonnegative and stds positive");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > kSimplexTol) throw ConfigError("mixture weights must sum to one");
}

MixtureSpec gaussian_1d(double mean, double sd) {
  MixtureComponent c;
  c.weight = 1.0;
  c.mean = Vector::Constant(1, mean);
  c.std = Vector::Constant(1, sd);
  return MixtureSpec{{c}};
}

ScenarioData build(std::uint64_t seed, MixtureSpec prior_spec, MixtureSpec target_spec) {
  const RngStream root(seed);
  RngStream prior_rng = root.split(0);
  RngStream target_rng = root.split(1);
  ScenarioData out;
  out.prior_spec = std::move(prior_spec);
  out.target_spec = std::move(target_spec);
  const int n = 2000;
  const int m = 500;
  out.prior = make_particle_set(sample_mixture(out.prior_spec, n, prior_rng),
                                Vector::Constant(n, 1.0 / n));
  out.target = make_particle_set(sample_mixture(out.target_spec, m, target_rng),
                                 Vector::Constant(m, 1.0 / m));
  return out;
}

}  // namespace

double mixture_mean_1d(const MixtureSpec& spec) {
  check_mixture(spec);
  if (spec.dim() != 1) throw DimensionMismatch("moment formulas are one-dimensional");
  double m = 0.0;
  for (const MixtureComponent& c : spec.components) m += c.weight * c.mean[0];
  return m;
}

double mixture_variance_1d(const MixtureSpec& spec) {
  const double m = mixture_mean_1d(spec);
  double second = 0.0;
  for (const MixtureComponent& c : spec.components)
    second += c.weight * (c.std[0] * c.std[0] + c.mean[0] * c.mean[0]);
  return second - m * m;
}

PointMatrix sample_mixture(const MixtureSpec& spec, int n, RngStream& rng) {
  check_mixture(spec);
  if (n < 1) throw ConfigError("need at least one sample");
  const Eigen::Index d = spec.dim();
  PointMatrix pts(n, d);
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t pick = spec.components.size() - 1;
    for (std::size_t k = 0; k < spec.components.size(); ++k) {
      acc += spec.components[k].weight;
      if (u < acc) {
        pick = k;
        break;
      }
    }
    const MixtureComponent& c = spec.components[pick];
    for (Eigen::Index j = 0; j < d; ++j) pts(i, j) = c.mean[j] + c.std[j] * rng.normal();
  }
  return pts;
}

ScenarioData scenario_a(std::uint64_t seed) {
  return build(seed, gaussian_1d(-5.0, 3.0), gaussian_1d(0.0, 0.5));
}

ScenarioData scenario_b(std::uint64_t seed) {
  MixtureSpec prior;
  MixtureSpec target;
  const double pw[3] = {0.5, 0.3, 0.2};
  const double pm[3] = {0.0, -4.0, 5.0};
  const double ps[3] = {0.8, 0.6, 0.7};
  for (int k = 0; k < 3; ++k) {
    MixtureComponent c;
    c.weight = pw[k];
    c.mean = Vector::Constant(1, pm[k]);
    c.std = Vector::Constant(1, ps[k]);
    prior.components.push_back(c);
  }
  const double tw[2] = {0.6, 0.4};
  const double tm[2] = {-1.0, 3.0};
  const double ts[2] = {0.5, 0.6};
  for (int k = 0; k < 2; ++k) {
    MixtureComponent c;
    c.weight = tw[k];
    c.mean = Vector::Constant(1, tm[k]);
    c.std = Vector::Constant(1, ts[k]);
    target.components.push_back(c);
  }
  return build(seed, std::move(prior), std::move(target));
}

Matrix gaussian_tilt_oracle(const Matrix& p_minus, double lambda) {
  if (p_minus.rows() != p_minus.cols()) throw DimensionMismatch("covariance must be square");
  if (!(lambda >= 0.0)) throw ConfigError("multiplier must be nonnegative");
  const Eigen::Index d = p_minus.rows();
  const Eigen::LLT<Matrix> llt(p_minus);
  if (llt.info() != Eigen::Success) throw NotSpd("prior covariance is not positive definite");
  Matrix precision = llt.solve(Matrix::Identity(d, d));
  precision += 2.0 * lambda * Matrix::Identity(d, d);
  const Eigen::LLT<Matrix> llt2(precision);
  if (llt2.info() != Eigen::Success) throw NotSpd("tilted precision is not positive definite");
  return llt2.solve(Matrix::Identity(d, d));
}

}  // namespace lisyn
