#include "lisyn/particles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "lisyn/errors.hpp"

namespace lisyn {

void validate(const ParticleSet& ps) {
  if (ps.points.rows() == 0) throw DimensionMismatch("particle set is empty");
  if (ps.weights.size() != ps.points.rows())
    throw DimensionMismatch("weight count does not match particle count");
  if (!ps.points.allFinite()) throw NonFinite("particle coordinates contain NaN/Inf");
  if (!ps.weights.allFinite()) throw NonFinite("weights contain NaN/Inf");
  if ((ps.weights.array() < 0.0).any()) throw NonFinite("weights contain negative entries");
  const double sum = ps.weights.sum();
  if (sum == 0.0) throw AllZero("weights sum to zero");
  if (std::abs(sum - 1.0) > kSimplexTol) throw Error("weights do not sum to one");
}

ParticleSet make_particle_set(PointMatrix points, Vector weights) {
  ParticleSet ps{std::move(points), std::move(weights)};
  validate(ps);
  return ps;
}

Vector normalize(const Vector& raw) {
  if (raw.size() == 0) throw DimensionMismatch("empty weight vector");
  if (!raw.allFinite()) throw NonFinite("weights contain NaN/Inf");
  if ((raw.array() < 0.0).any()) throw NonFinite("weights contain negative entries");
  const double sum = raw.sum();
  if (sum == 0.0) throw AllZero("weights sum to zero");
  Vector w = raw / sum;
  w = (w.array() < kWeightFloor).select(0.0, w);
  const double sum2 = w.sum();
  if (sum2 == 0.0) throw AllZero("all weights fell below the clamping floor");
  return w / sum2;
}

double ess(const Vector& weights) {
  if (weights.size() == 0) throw DimensionMismatch("empty weight vector");
  const double s1 = weights.sum();
  const double s2 = weights.squaredNorm();
  if (s2 == 0.0) throw AllZero("weights sum to zero");
  return s1 * s1 / s2;
}

ParticleSet systematic_resample(const ParticleSet& ps, RngStream& rng) {
  validate(ps);
  const Eigen::Index n = ps.size();
  const double u = rng.uniform() / static_cast<double>(n);

  ParticleSet out;
  out.points.resize(n, ps.dim());
  out.weights = Vector::Constant(n, 1.0 / static_cast<double>(n));

  double cum = ps.weights[0];
  Eigen::Index src = 0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double pos = u + static_cast<double>(k) / static_cast<double>(n);
    while (cum < pos && src + 1 < n) {
      ++src;
      cum += ps.weights[src];
    }
    out.points.row(k) = ps.points.row(src);
  }
  return out;
}

Moments weighted_mean_and_second_moment(const ParticleSet& ps) {
  validate(ps);
  Moments m;
  m.mean = ps.points.transpose() * ps.weights;
  m.second_moment = ps.points.transpose() * ps.weights.asDiagonal() * ps.points;
  return m;
}

double weighted_quantile(const Vector& values, const Vector& weights, double q) {
  if (values.size() != weights.size()) throw DimensionMismatch("values/weights length mismatch");
  if (values.size() == 0) throw DimensionMismatch("empty sample");
  const Vector w = normalize(weights);

  std::vector<Eigen::Index> order(values.size());
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return values[a] < values[b]; });

  // Midpoint positions c_k = cum_k - w_k/2 give a piecewise-linear inverse CDF.
  double cum = 0.0;
  double prev_c = 0.0, prev_v = values[order[0]];
  bool have_prev = false;
  for (Eigen::Index k = 0; k < values.size(); ++k) {
    const double wk = w[order[k]];
    cum += wk;
    const double c = cum - 0.5 * wk;
    const double v = values[order[k]];
    if (!have_prev) {
      if (q <= c) return v;
      have_prev = true;
    } else if (q <= c) {
      const double t = (c > prev_c) ? (q - prev_c) / (c - prev_c) : 1.0;
      return prev_v + t * (v - prev_v);
    }
    prev_c = c;
    prev_v = v;
  }
  return prev_v;
}

}  // namespace lisyn
