#include "lisyn/kernels.hpp"

#include <cmath>

#include "lisyn/errors.hpp"

namespace lisyn {

namespace {

// Squared Euclidean cross-distances, clamped at zero against cancellation.
Matrix squared_distances(const PointMatrix& x, const PointMatrix& z) {
  if (x.cols() != z.cols()) throw DimensionMismatch("point dimensions differ");
  if (x.rows() == 0 || z.rows() == 0) throw DimensionMismatch("empty point set");
  if (!x.allFinite() || !z.allFinite()) throw NonFinite("points contain NaN/Inf");
  const Vector xn = x.rowwise().squaredNorm();
  const Vector zn = z.rowwise().squaredNorm();
  Matrix d2 = (-2.0 * x * z.transpose());
  d2.colwise() += xn;
  d2.rowwise() += zn.transpose();
  return d2.cwiseMax(0.0);
}

}  // namespace

Matrix cost_matrix(const PointMatrix& x, const PointMatrix& z, double p) {
  if (!(p > 0.0) || !std::isfinite(p)) throw ConfigError("cost order p must be positive");
  Matrix d2 = squared_distances(x, z);
  if (p == 2.0) return d2;
  return d2.array().pow(0.5 * p).matrix();
}

Matrix gaussian_kernel(const PointMatrix& x, const PointMatrix& z, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("kernel bandwidth must be positive");
  const Matrix d2 = squared_distances(x, z);
  return (d2.array() * (-0.5 / (sigma * sigma))).exp().matrix();
}

KernelMatrices kernel_matrices(const PointMatrix& x, const PointMatrix& z, const KernelSpec& k) {
  KernelMatrices m;
  m.kxx = gaussian_kernel(x, x, k.bandwidth);
  m.kxz = gaussian_kernel(x, z, k.bandwidth);
  m.kzz = gaussian_kernel(z, z, k.bandwidth);
  return m;
}

double silverman_bandwidth(const PointMatrix& pts, const Vector& weights) {
  if (pts.rows() != weights.size()) throw DimensionMismatch("points/weights length mismatch");
  const Vector w = normalize(weights);
  const double neff = ess(w);
  const double scale = 0.9 * std::pow(neff, -0.2);

  double acc = 0.0;
  for (Eigen::Index c = 0; c < pts.cols(); ++c) {
    const Vector col = pts.col(c);
    const double mean = col.dot(w);
    const double var = ((col.array() - mean).square() * w.array()).sum();
    const double sd = std::sqrt(std::max(var, 0.0));
    const double iqr =
        (weighted_quantile(col, w, 0.75) - weighted_quantile(col, w, 0.25)) / 1.34;
    double spread;
    if (sd > 0.0 && iqr > 0.0) spread = std::min(sd, iqr);
    else spread = std::max(sd, iqr);
    acc += scale * spread;
  }
  const double h = acc / static_cast<double>(pts.cols());
  // Degenerate sample (all points identical): any positive value works.
  return h > 0.0 ? h : 1e-3;
}

Vector interpolate_target_weights(const PointMatrix& x, const ParticleSet& target, double sigma) {
  validate(target);
  const Matrix k = gaussian_kernel(x, target.points, sigma);
  Vector s = k * target.weights;
  s = s.cwiseMax(1e-12);
  return s / s.sum();
}

}  // namespace lisyn
