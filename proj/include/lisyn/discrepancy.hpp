#ifndef LISYN_DISCREPANCY_HPP
#define LISYN_DISCREPANCY_HPP

#include <functional>
#include <optional>
#include <variant>
#include <vector>

#include "lisyn/kernels.hpp"
#include "lisyn/particles.hpp"

namespace lisyn {

// ---------------------------------------------------------------------------
// Transport plans and entropic optimal transport
// ---------------------------------------------------------------------------

struct TransportPlan {
  Matrix gamma;  // N x M, nonnegative, total mass 1
  double cost;   // <C, gamma>, the unregularized transported cost
};

struct SinkhornOptions {
  // Entropic regularization: eta_abs when set, else eta_rel * mean(C).
  double eta_rel = 1e-2;
  std::optional<double> eta_abs = std::nullopt;
  double marginal_tol = 1e-7;
  int max_iter = 10000;
};

double resolve_eta(const Matrix& cost, const SinkhornOptions& opt);

// Log-domain Sinkhorn iteration for fixed marginals (w, v).  Zero-weight
// atoms are dropped before iterating and re-embedded as zero rows/columns.
// Throws NoConvergence when the marginal residual still exceeds the
// tolerance at the iteration cap.
TransportPlan sinkhorn_plan(const Vector& w, const Vector& v, const Matrix& cost, double eta,
                            double marginal_tol = 1e-7, int max_iter = 10000);

// W_p estimate <C, Gamma_eta>^(1/p) from the entropic plan (no debiasing).
double wasserstein_sinkhorn(const ParticleSet& a, const ParticleSet& b, double p,
                            const SinkhornOptions& opt = {});

// Exact one-dimensional W_p via the monotone quantile coupling of the two
// sorted supports.  Reference implementation for tests.
double wasserstein_1d_exact(const Vector& xa, const Vector& wa, const Vector& xb,
                            const Vector& wb, double p);

// ---------------------------------------------------------------------------
// Kernel and moment metrics
// ---------------------------------------------------------------------------

// Squared MMD and its gradient in the first weight vector:
// w'Kxx w - 2 w'Kxz v + v'Kzz v;  grad = 2 (Kxx w - Kxz v).
double mmd_squared(const Vector& w, const Vector& v, const KernelMatrices& k,
                   Vector* grad = nullptr);

double mmd(const ParticleSet& a, const ParticleSet& b, const KernelSpec& kernel);

// chi^2(w || vtilde) = sum_i (w_i - vtilde_i)^2 / vtilde_i; requires
// vtilde > 0 elementwise.
double chi_squared(const Vector& w, const Vector& vtilde);

struct FeatureMap {
  enum class Kind { Mean, MeanSecondMoment, Custom };
  Kind kind = Kind::Mean;
  // Custom: one scalar feature per entry.
  std::vector<std::function<double(const Vector&)>> custom;

  // Number of features for points of dimension d.  MeanSecondMoment uses the
  // upper triangle of x x^T, so d + d(d+1)/2.
  Eigen::Index feature_count(Eigen::Index d) const;
};

// Q x N matrix whose columns are phi(x_i).
Matrix feature_matrix(const FeatureMap& features, const PointMatrix& pts);

struct MomentNorm {
  enum class Kind { L2, PerComponent };
  Kind kind = Kind::L2;
  // PerComponent: D = max_q |delta_q| / scales_q (scales > 0, length Q).
  Vector scales;
};

// Norm of A w - b where A = feature_matrix(prior points), b = features of
// the target under v.
double moment_discrepancy(const Vector& w, const PointMatrix& x, const Vector& v,
                          const PointMatrix& z, const FeatureMap& features,
                          const MomentNorm& norm);

// ||A w - b||^2 and gradient 2 A'(A w - b); shared by solver and tests.
double moment_sqnorm(const Vector& w, const Matrix& a, const Vector& b, Vector* grad = nullptr);

// ---------------------------------------------------------------------------
// Tagged metric choice
// ---------------------------------------------------------------------------

struct WassersteinSpec {
  double p = 2.0;
  SinkhornOptions sinkhorn;
};

struct MmdSpec {
  KernelSpec kernel;
};

struct ChiSquaredSpec {
  // Smoothing bandwidth used to interpolate target weights onto the prior
  // support; unset means Silverman's rule on the target set.
  std::optional<double> smoothing_sigma = std::nullopt;
};

struct MomentSpec {
  FeatureMap features;
  MomentNorm norm;
};

class DiscrepancySpec;

struct HybridComponent {
  double weight;  // > 0
  std::variant<WassersteinSpec, MmdSpec, ChiSquaredSpec, MomentSpec> metric;
};

struct HybridSpec {
  std::vector<HybridComponent> parts;
};

class DiscrepancySpec {
 public:
  using Variant = std::variant<WassersteinSpec, MmdSpec, ChiSquaredSpec, MomentSpec, HybridSpec>;

  static DiscrepancySpec wasserstein(double p = 2.0, SinkhornOptions opt = {});
  static DiscrepancySpec mmd_kernel(KernelSpec kernel);
  static DiscrepancySpec chi_squared_smoothed(std::optional<double> sigma = std::nullopt);
  static DiscrepancySpec moments(FeatureMap features, MomentNorm norm);
  // Component weights must be positive; errors at construction otherwise.
  static DiscrepancySpec hybrid(std::vector<HybridComponent> parts);

  const Variant& variant() const { return v_; }

 private:
  explicit DiscrepancySpec(Variant v) : v_(std::move(v)) {}
  Variant v_;
};

// Evaluates the chosen metric between a posterior particle set and a target
// particle set.  For chi-squared the target is first interpolated onto the
// posterior support.
double evaluate(const DiscrepancySpec& spec, const ParticleSet& posterior,
                const ParticleSet& target);

}  // namespace lisyn

#endif
