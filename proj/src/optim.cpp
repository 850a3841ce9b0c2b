#include "lisyn/optim.hpp"

#include <cmath>
#include <deque>
#include <limits>

#include "lisyn/errors.hpp"

namespace lisyn {

double bisect_multiplier(const std::function<double(double)>& residual,
                         const RootFindConfig& cfg) {
  if (!(cfg.lambda_hi > cfg.lambda_lo) || cfg.lambda_lo < 0.0)
    throw ConfigError("bisection bracket must satisfy 0 <= lambda_lo < lambda_hi");
  if (!(cfg.delta > 0.0)) throw ConfigError("bisection delta must be positive");

  double lo = cfg.lambda_lo;
  const double r_lo = residual(lo);
  if (!std::isfinite(r_lo)) throw NonFinite("residual at lambda_lo is not finite");
  if (r_lo <= 0.0) return lo;  // constraint already satisfied

  double hi = cfg.lambda_hi;
  double r_hi = residual(hi);
  double r_lo_cur = r_lo;
  int doublings = 0;
  while (r_hi > 0.0) {
    if (std::abs(r_hi) <= cfg.delta) return hi;
    if (++doublings > cfg.max_doublings)
      throw BracketFailure("residual still positive at lambda = " + std::to_string(hi));
    lo = hi;
    r_lo_cur = r_hi;
    hi *= 2.0;
    r_hi = residual(hi);
    if (!std::isfinite(r_hi)) throw NonFinite("residual is not finite during bracketing");
  }
  if (std::abs(r_hi) <= cfg.delta) return hi;

  // Illinois-damped regula falsi: keeps the bracket of plain bisection but
  // typically collapses it superlinearly, which matters when every residual
  // evaluation is a full inner solve.
  double a = lo, fa = r_lo_cur;
  double b = hi, fb = r_hi;
  for (int it = 0; it < cfg.max_iter; ++it) {
    double m = (a * fb - b * fa) / (fb - fa);
    const double span = b - a;
    if (!std::isfinite(m) || m <= a + 1e-3 * span || m >= b - 1e-3 * span)
      m = 0.5 * (a + b);
    const double r = residual(m);
    if (!std::isfinite(r)) throw NonFinite("residual is not finite during bisection");
    if (std::abs(r) <= cfg.delta) return m;
    if (r > 0.0) {
      a = m;
      fa = r;
      fb *= 0.5;
    } else {
      b = m;
      fb = r;
      fa *= 0.5;
    }
  }
  throw NoConvergence("bisection exhausted max iterations");
}

namespace {

// Normalizes log-weights in place and returns the simplex vector.
Vector exp_normalized(const Vector& logw) {
  const double m = logw.maxCoeff();
  Vector w = (logw.array() - m).exp();
  return w / w.sum();
}

}  // namespace

MirrorDescentResult mirror_descent_simplex(
    const Vector& w0, const std::function<void(const Vector&, Vector&)>& gradient,
    const MirrorDescentConfig& cfg, const std::function<double(const Vector&)>& objective) {
  if (w0.size() == 0) throw DimensionMismatch("empty start point");
  if ((w0.array() <= 0.0).any())
    throw SupportViolation("mirror descent requires a strictly positive start");
  if (!(cfg.step > 0.0)) throw ConfigError("mirror descent step must be positive");

  Vector w = w0 / w0.sum();
  Vector logw = w.array().log();
  Vector g(w.size());
  double f = objective ? objective(w) : 0.0;
  double step_eff = cfg.step;

  MirrorDescentResult out;
  for (int t = 1; t <= cfg.max_iter; ++t) {
    gradient(w, g);
    if (!g.allFinite()) throw NonFinite("mirror descent gradient is not finite");

    const double base = cfg.sqrt_decay ? cfg.step / std::sqrt(static_cast<double>(t)) : cfg.step;
    step_eff = std::min(base, step_eff * 2.0);

    Vector w_new;
    double f_new = 0.0;
    while (true) {
      w_new = exp_normalized(logw - step_eff * g);
      if (!objective) break;
      f_new = objective(w_new);
      if (f_new <= f + 1e-12 * (1.0 + std::abs(f))) break;
      step_eff *= 0.5;
      if (step_eff < 1e-14 * cfg.step) {
        // No descent direction at working precision: accept the fixed point.
        out.w = w;
        out.iterations = t;
        out.converged = true;
        return out;
      }
    }

    const double change = (w_new - w).array().abs().sum();
    w = w_new;
    logw = w.array().log();
    if (objective) f = f_new;
    out.iterations = t;
    if (change <= cfg.tol_l1) {
      out.converged = true;
      break;
    }
  }
  out.w = w;
  return out;
}

QuasiNewtonResult quasi_newton_minimize(
    const std::function<double(const Vector&, Vector&)>& value_and_grad, const Vector& x0,
    const QuasiNewtonConfig& cfg) {
  const Eigen::Index n = x0.size();
  if (n == 0) throw DimensionMismatch("empty start point");

  Vector x = x0;
  Vector g(n);
  double f = value_and_grad(x, g);
  if (!std::isfinite(f) || !g.allFinite())
    throw NonFinite("objective/gradient not finite at the start point");

  struct Pair { Vector s, y; double rho; };
  std::deque<Pair> mem;

  QuasiNewtonResult out;
  out.x = x;
  out.value = f;
  out.gradient = g;

  for (int it = 0; it < cfg.max_iter; ++it) {
    if (g.lpNorm<Eigen::Infinity>() <= cfg.grad_tol) {
      out.converged = true;
      break;
    }

    // Two-loop recursion for the search direction.
    Vector q = g;
    std::vector<double> alpha(mem.size());
    for (std::size_t k = mem.size(); k-- > 0;) {
      alpha[k] = mem[k].rho * mem[k].s.dot(q);
      q -= alpha[k] * mem[k].y;
    }
    if (!mem.empty()) {
      const auto& last = mem.back();
      q *= last.s.dot(last.y) / last.y.squaredNorm();
    }
    for (std::size_t k = 0; k < mem.size(); ++k) {
      const double beta = mem[k].rho * mem[k].y.dot(q);
      q += (alpha[k] - beta) * mem[k].s;
    }
    Vector p = -q;
    double slope = g.dot(p);
    if (!(slope < 0.0)) {  // fall back to steepest descent
      p = -g;
      slope = -g.squaredNorm();
    }

    // Armijo backtracking from a unit step.  Before any curvature pair is
    // stored the direction is raw steepest descent, so cap the first trial
    // step at unit norm; a bare unit step can vault over the basin onto a
    // flat region that the decrease test happily accepts.
    double steplen = 1.0;
    if (mem.empty()) steplen = std::min(1.0, 1.0 / p.norm());
    Vector x_new(n), g_new(n);
    double f_new = 0.0;
    bool accepted = false;
    for (int b = 0; b <= cfg.max_backtracks; ++b) {
      x_new = x + steplen * p;
      f_new = value_and_grad(x_new, g_new);
      if (std::isfinite(f_new) && g_new.allFinite() &&
          f_new <= f + cfg.armijo_c * steplen * slope) {
        accepted = true;
        break;
      }
      steplen *= cfg.backtrack;
    }
    if (!accepted) {
      if (g.lpNorm<Eigen::Infinity>() <= 1e2 * cfg.grad_tol) {
        out.converged = true;  // flat to working precision
        break;
      }
      if (cfg.accept_stall) break;
      throw LineSearchFailure("no Armijo step after " + std::to_string(cfg.max_backtracks) +
                              " backtracks");
    }

    Vector s = x_new - x;
    Vector y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-10 * s.norm() * y.norm()) {
      mem.push_back({std::move(s), std::move(y), 1.0 / sy});
      if (static_cast<int>(mem.size()) > cfg.memory) mem.pop_front();
    }

    x = std::move(x_new);
    g = g_new;
    f = f_new;
    out.iterations = it + 1;
    out.x = x;
    out.value = f;
    out.gradient = g;
  }
  if (g.lpNorm<Eigen::Infinity>() <= cfg.grad_tol) out.converged = true;
  return out;
}

MultiStartResult multi_start(
    const std::function<QuasiNewtonResult(const Vector&)>& solve_from, const Vector& init,
    const std::function<Vector(const Vector&, int, RngStream&)>& perturb, int restarts,
    const RngStream& rng) {
  if (restarts < 1) throw ConfigError("multi_start needs at least one restart");

  MultiStartResult out;
  out.restart_values.assign(static_cast<std::size_t>(restarts),
                            std::numeric_limits<double>::infinity());
  for (int t = 1; t <= restarts; ++t) {
    Vector start = init;
    if (t >= 2) {
      RngStream sub = rng.split(static_cast<std::uint64_t>(t));
      start = perturb(init, t, sub);
    }
    try {
      QuasiNewtonResult r = solve_from(start);
      out.restart_values[static_cast<std::size_t>(t - 1)] = r.value;
      if (out.best_restart < 0 || r.value < out.best.value) {
        out.best = std::move(r);
        out.best_restart = t;
      }
    } catch (const Error&) {
      ++out.failures;
    }
  }
  if (out.best_restart < 0) throw AllRestartsFailed("all multi-start restarts failed");
  return out;
}

}  // namespace lisyn
