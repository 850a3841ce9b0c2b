#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "lisyn/errors.hpp"
#include "lisyn/kernels.hpp"
#include "lisyn/particles.hpp"
#include "lisyn/rng.hpp"
#include "lisyn/scenarios.hpp"

using namespace lisyn;

namespace {

PointMatrix pts_1d(std::initializer_list<double> xs) {
  PointMatrix p(static_cast<Eigen::Index>(xs.size()), 1);
  Eigen::Index i = 0;
  for (double x : xs) p(i++, 0) = x;
  return p;
}

PointMatrix random_pts(RngStream& rng, Eigen::Index n, int dim) {
  PointMatrix p(n, dim);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int d = 0; d < dim; ++d) p(i, d) = rng.normal();
  return p;
}

}  // namespace

TEST_CASE("cost_matrix on hand-checked inputs") {
  {
    const Matrix c = cost_matrix(pts_1d({0.0}), pts_1d({3.0}), 2.0);
    REQUIRE(c.rows() == 1);
    REQUIRE(c.cols() == 1);
    CHECK(c(0, 0) == doctest::Approx(9.0));
  }
  {
    const PointMatrix x = pts_1d({-1.0, 0.5, 2.0});
    const Matrix c = cost_matrix(x, x, 2.0);
    for (Eigen::Index i = 0; i < 3; ++i) CHECK(c(i, i) == 0.0);
  }
  {
    const Matrix c = cost_matrix(pts_1d({0.0, 1.0}), pts_1d({2.0}), 1.0);
    CHECK(c(0, 0) == doctest::Approx(2.0));
    CHECK(c(1, 0) == doctest::Approx(1.0));
  }
}

TEST_CASE("cost_matrix transposes under argument swap") {
  RngStream rng(31);
  const PointMatrix x = random_pts(rng, 5, 3);
  const PointMatrix z = random_pts(rng, 4, 3);
  const Matrix cxz = cost_matrix(x, z, 1.7);
  const Matrix czx = cost_matrix(z, x, 1.7);
  CHECK((cxz - czx.transpose()).lpNorm<Eigen::Infinity>() < 1e-14);
}

TEST_CASE("cost_matrix rejects mismatched dimensions") {
  RngStream rng(1);
  const PointMatrix x = random_pts(rng, 3, 2);
  const PointMatrix z = random_pts(rng, 3, 1);
  CHECK_THROWS_AS(cost_matrix(x, z, 2.0), DimensionMismatch);
}

TEST_CASE("gaussian kernel values") {
  const double sigma = 0.8;
  {
    const PointMatrix x = pts_1d({0.3, -1.4});
    const KernelMatrices km = kernel_matrices(x, x, KernelSpec{sigma});
    CHECK(km.kxx(0, 0) == doctest::Approx(1.0));
    CHECK(km.kxx(1, 1) == doctest::Approx(1.0));
    CHECK(km.kzz(0, 0) == doctest::Approx(1.0));
  }
  {
    // Separation sigma*sqrt(2) sits exactly one e-fold down.
    const PointMatrix x = pts_1d({0.0});
    const PointMatrix z = pts_1d({sigma * std::sqrt(2.0)});
    const KernelMatrices km = kernel_matrices(x, z, KernelSpec{sigma});
    CHECK(km.kxz(0, 0) == doctest::Approx(std::exp(-1.0)));
  }
}

TEST_CASE("gram matrix of distinct points is psd up to roundoff") {
  const PointMatrix x = pts_1d({-0.7, 0.2, 1.9});
  const KernelMatrices km = kernel_matrices(x, x, KernelSpec{0.5});
  Eigen::SelfAdjointEigenSolver<Matrix> eig(km.kxx);
  CHECK(eig.eigenvalues().minCoeff() >= -1e-12);

  RngStream rng(17);
  const PointMatrix y = random_pts(rng, 20, 2);
  const KernelMatrices km2 = kernel_matrices(y, y, KernelSpec{1.3});
  Eigen::SelfAdjointEigenSolver<Matrix> eig2(km2.kxx);
  CHECK(eig2.eigenvalues().minCoeff() >= -1e-12);
  CHECK((km2.kxx.array() > 0.0).all());
  CHECK((km2.kxx.array() <= 1.0 + 1e-15).all());
}

TEST_CASE("kernel matrices are translation invariant") {
  RngStream rng(42);
  const PointMatrix x = random_pts(rng, 6, 2);
  const PointMatrix z = random_pts(rng, 5, 2);
  PointMatrix xs = x, zs = z;
  xs.array() += 11.25;
  zs.array() += 11.25;
  const KernelMatrices a = kernel_matrices(x, z, KernelSpec{0.9});
  const KernelMatrices b = kernel_matrices(xs, zs, KernelSpec{0.9});
  CHECK((a.kxz - b.kxz).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((a.kxx - b.kxx).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("interpolation reproduces shared-support weights at tiny bandwidth") {
  RngStream rng(8);
  PointMatrix pts(12, 1);
  for (Eigen::Index i = 0; i < 12; ++i) pts(i, 0) = static_cast<double>(i);
  Vector v(12);
  for (Eigen::Index i = 0; i < 12; ++i) v[i] = rng.uniform() + 0.05;
  v /= v.sum();
  const ParticleSet target{pts, v};
  // Unit spacing, so sigma at 1e-3 of that scale isolates each atom.
  const Vector vt = interpolate_target_weights(pts, target, 1e-3);
  CHECK((vt - v).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("interpolation splits a single target between equidistant atoms") {
  const PointMatrix x = pts_1d({-1.0, 1.0});
  const ParticleSet target{pts_1d({0.0}), Vector::Constant(1, 1.0)};
  const Vector vt = interpolate_target_weights(x, target, 0.7);
  CHECK(vt[0] == doctest::Approx(0.5));
  CHECK(vt[1] == doctest::Approx(0.5));
}

TEST_CASE("interpolated weights form a strictly positive simplex vector") {
  const ScenarioData data = scenario_b(kDefaultScenarioSeed);
  const double sigma = silverman_bandwidth(data.target.points, data.target.weights);
  CHECK(sigma > 0.0);
  const Vector vt = interpolate_target_weights(data.prior.points, data.target, sigma);
  CHECK(vt.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((vt.array() > 0.0).all());

  // Atoms near every prior mode keep strictly positive interpolated mass,
  // including the mode far from any target mass (the positivity floor).
  const Eigen::Index n = data.prior.size();
  for (double mode : {0.0, -4.0, 5.0}) {
    double best = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      if (std::abs(data.prior.points(i, 0) - mode) < 0.5) best = std::max(best, vt[i]);
    CHECK(best > 0.0);
  }
}

TEST_CASE("silverman bandwidth scales with the sample spread") {
  RngStream rng(9);
  PointMatrix pts = random_pts(rng, 200, 1);
  const Vector w = Vector::Constant(200, 1.0 / 200.0);
  const double h1 = silverman_bandwidth(pts, w);
  PointMatrix wide = pts;
  wide.array() *= 10.0;
  const double h10 = silverman_bandwidth(wide, w);
  CHECK(h1 > 0.0);
  CHECK(h10 == doctest::Approx(10.0 * h1).epsilon(1e-10));
}
