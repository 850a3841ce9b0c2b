#ifndef LISYN_SCENARIOS_HPP
#define LISYN_SCENARIOS_HPP

#include <cstdint>
#include <vector>

#include "lisyn/particles.hpp"
#include "lisyn/rng.hpp"

namespace lisyn {

struct MixtureComponent {
  double weight = 1.0;
  Vector mean;
  Vector std;  // per coordinate, > 0
};

struct MixtureSpec {
  std::vector<MixtureComponent> components;

  Eigen::Index dim() const { return components.empty() ? 0 : components.front().mean.size(); }
};

// Exact first and second moments of a one-dimensional mixture.
double mixture_mean_1d(const MixtureSpec& spec);
double mixture_variance_1d(const MixtureSpec& spec);

// Component via inverse CDF on the weights, then a Gaussian draw per
// coordinate; one point per row, fully determined by the stream.
PointMatrix sample_mixture(const MixtureSpec& spec, int n, RngStream& rng);

struct ScenarioData {
  ParticleSet prior;
  ParticleSet target;
  MixtureSpec prior_spec;
  MixtureSpec target_spec;
};

inline constexpr std::uint64_t kDefaultScenarioSeed = 42;

// Unimodal benchmark: prior N(-5, 9) with 2000 particles, target N(0, 0.25)
// with 500 particles, uniform weights.
ScenarioData scenario_a(std::uint64_t seed);

// Multimodal benchmark: prior mixture weights (0.5, 0.3, 0.2), means
// (0, -4, 5), stds (0.8, 0.6, 0.7); target mixture weights (0.6, 0.4),
// means (-1, 3), stds (0.5, 0.6).  Same particle counts as scenario_a.
ScenarioData scenario_b(std::uint64_t seed);

// Posterior covariance of the closed-form budgeted update of a centered
// Gaussian: ((P-)^-1 + 2 lambda I)^-1.
Matrix gaussian_tilt_oracle(const Matrix& p_minus, double lambda);

}  // namespace lisyn

#endif
