#ifndef LISYN_PARTICLES_HPP
#define LISYN_PARTICLES_HPP

#include <Eigen/Dense>

#include "lisyn/rng.hpp"

namespace lisyn {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// Particle coordinates, one row per particle.  Row-major storage keeps each
// particle contiguous in memory.
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Tolerance for "weights sum to one" checks.
inline constexpr double kSimplexTol = 1e-10;
// Weights below this are treated as exact zeros so log ratios cannot
// underflow to -inf on denormals.
inline constexpr double kWeightFloor = 1e-300;

struct ParticleSet {
  PointMatrix points;  // N x d
  Vector weights;      // length N, on the simplex

  Eigen::Index size() const { return points.rows(); }
  Eigen::Index dim() const { return points.cols(); }
};

// Throws DimensionMismatch / NonFinite / AllZero when the set violates its
// invariants (finite coordinates, weight count N, simplex weights).
void validate(const ParticleSet& ps);

// Validating constructor.
ParticleSet make_particle_set(PointMatrix points, Vector weights);

// Scales nonnegative weights onto the simplex.  Entries below kWeightFloor
// are clamped to exact zero before the final rescale.
Vector normalize(const Vector& raw);

// Effective sample size (sum w)^2 / sum w^2; equals 1/sum w_i^2 on the
// simplex.  Invariant under permutation and positive rescaling.
double ess(const Vector& weights);

// Systematic resampling: one uniform draw u ~ U[0, 1/N), selection at the N
// comb positions u + k/N.  Output has the same particle count with uniform
// weights.  Duplicates rows; never invents new points.
ParticleSet systematic_resample(const ParticleSet& ps, RngStream& rng);

struct Moments {
  Vector mean;           // d
  Matrix second_moment;  // d x d, sum_i w_i x_i x_i^T

  Matrix covariance() const {
    return second_moment - mean * mean.transpose();
  }
};

Moments weighted_mean_and_second_moment(const ParticleSet& ps);

// Weighted quantile with linear interpolation between the cumulative-weight
// midpoints of the sorted sample; clamps to the extreme order statistics.
double weighted_quantile(const Vector& values, const Vector& weights, double q);

}  // namespace lisyn

#endif
