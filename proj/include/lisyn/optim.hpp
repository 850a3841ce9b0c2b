#ifndef LISYN_OPTIM_HPP
#define LISYN_OPTIM_HPP

#include <functional>
#include <vector>

#include "lisyn/particles.hpp"
#include "lisyn/rng.hpp"

namespace lisyn {

// ---------------------------------------------------------------------------
// Scalar multiplier search
// ---------------------------------------------------------------------------

struct RootFindConfig {
  double lambda_lo = 0.0;
  double lambda_hi = 1.0;
  double delta = 1e-8;    // |residual| tolerance at the returned multiplier
  int max_doublings = 10;
  int max_iter = 200;
};

// Finds lambda* with |residual(lambda*)| <= delta for a monotone
// nonincreasing residual.  Returns lambda_lo immediately when
// residual(lambda_lo) <= 0 (inactive constraint).  The upper bracket is
// doubled until the residual goes nonpositive; BracketFailure after
// max_doublings, NoConvergence if bisection exhausts max_iter.
double bisect_multiplier(const std::function<double(double)>& residual,
                         const RootFindConfig& cfg);

// ---------------------------------------------------------------------------
// Mirror descent on the probability simplex
// ---------------------------------------------------------------------------

struct MirrorDescentConfig {
  double step = 0.5;
  bool sqrt_decay = false;  // step_t = step / sqrt(t) instead of constant
  double tol_l1 = 1e-8;     // stop when ||w_{t+1} - w_t||_1 <= tol_l1
  int max_iter = 5000;
};

struct MirrorDescentResult {
  Vector w;
  int iterations = 0;
  bool converged = false;
};

// Multiplicative-weights iteration w <- w exp(-step g(w)) / Z, carried in
// the log domain so iterates stay strictly inside the simplex.  When an
// objective is supplied the step is backtracked until the objective does not
// increase, and regrown afterwards.
MirrorDescentResult mirror_descent_simplex(
    const Vector& w0, const std::function<void(const Vector&, Vector&)>& gradient,
    const MirrorDescentConfig& cfg,
    const std::function<double(const Vector&)>& objective = nullptr);

// ---------------------------------------------------------------------------
// Limited-memory BFGS with Armijo backtracking
// ---------------------------------------------------------------------------

struct QuasiNewtonConfig {
  int max_iter = 500;
  double grad_tol = 1e-8;    // sup-norm of the gradient
  int memory = 10;
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  int max_backtracks = 60;
  // Return the best iterate instead of throwing LineSearchFailure when no
  // Armijo step exists; for callers that treat the result as a polish.
  bool accept_stall = false;
};

struct QuasiNewtonResult {
  Vector x;
  double value = 0.0;
  Vector gradient;
  int iterations = 0;
  bool converged = false;
};

// Minimizes a smooth unconstrained function given by value_and_grad(x, g).
// The returned value never exceeds the starting value.  Throws
// LineSearchFailure when Armijo backtracking cannot find a decrease and the
// gradient is not yet small; NonFinite when the starting point is bad.
QuasiNewtonResult quasi_newton_minimize(
    const std::function<double(const Vector&, Vector&)>& value_and_grad, const Vector& x0,
    const QuasiNewtonConfig& cfg);

// ---------------------------------------------------------------------------
// Multi-start driver
// ---------------------------------------------------------------------------

struct MultiStartResult {
  QuasiNewtonResult best;
  int best_restart = -1;              // 1-based restart index of the winner
  std::vector<double> restart_values; // per-restart objective, +inf on failure
  int failures = 0;
};

// Runs `restarts` solves: restart 1 from init unperturbed, restart t >= 2
// from perturb(init, t, substream).  Substreams derive from the restart
// index only, so the result does not depend on execution order.  Throws
// AllRestartsFailed when every restart raises an error.
MultiStartResult multi_start(
    const std::function<QuasiNewtonResult(const Vector&)>& solve_from, const Vector& init,
    const std::function<Vector(const Vector&, int, RngStream&)>& perturb, int restarts,
    const RngStream& rng);

}  // namespace lisyn

#endif
