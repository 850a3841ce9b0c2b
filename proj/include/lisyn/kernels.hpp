#ifndef LISYN_KERNELS_HPP
#define LISYN_KERNELS_HPP

#include "lisyn/particles.hpp"

namespace lisyn {

// Isotropic Gaussian kernel exp(-||x - z||^2 / (2 sigma^2)).
struct KernelSpec {
  double bandwidth = 1.0;
};

// C_ij = ||x_i - z_j||^p (Euclidean norm to the p-th power).
// Row sums and reductions over this matrix are done sequentially so results
// are bit-reproducible.
Matrix cost_matrix(const PointMatrix& x, const PointMatrix& z, double p);

struct KernelMatrices {
  Matrix kxx;  // N x N
  Matrix kxz;  // N x M
  Matrix kzz;  // M x M
};

KernelMatrices kernel_matrices(const PointMatrix& x, const PointMatrix& z, const KernelSpec& k);

Matrix gaussian_kernel(const PointMatrix& x, const PointMatrix& z, double sigma);

// Weighted Silverman bandwidth: per coordinate 0.9 min(sd, IQR/1.34) *
// ess(w)^(-1/5), averaged over coordinates.  Falls back to the nonzero one
// of sd / IQR when the other degenerates.
double silverman_bandwidth(const PointMatrix& pts, const Vector& weights);

// Kernel-smoothed target weights on the prior support:
// vtilde_i proportional to sum_j v_j exp(-||x_i - z_j||^2 / (2 sigma^2)),
// floored at 1e-12 before normalization so chi-squared ratios stay finite.
Vector interpolate_target_weights(const PointMatrix& x, const ParticleSet& target, double sigma);

}  // namespace lisyn

#endif
