#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "lisyn/errors.hpp"
#include "lisyn/synthesis.hpp"

// Small-instance reference solver.  Deliberately avoids the scaling and
// fixed-point machinery in synthesis.cpp: inner problems are solved by
// projected gradient in the primal, moment bounds by a quadratic penalty,
// and penalty gradients come from central differences.

namespace lisyn {

namespace {

constexpr double kTiny = 1e-300;

// Euclidean projection onto {x >= 0, sum x = s}.
Vector project_scaled_simplex(const Vector& y, double s) {
  const Eigen::Index n = y.size();
  std::vector<double> u(y.data(), y.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0;
  double tau = (u[0] - s);
  for (Eigen::Index j = 0; j < n; ++j) {
    css += u[static_cast<std::size_t>(j)];
    const double t = (css - s) / static_cast<double>(j + 1);
    if (u[static_cast<std::size_t>(j)] - t > 0.0)
      tau = t;
    else
      break;
  }
  return (y.array() - tau).max(0.0).matrix();
}

struct PgProblem {
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> grad;
  std::function<Vector(const Vector&)> project;
};

Vector pg_solve(Vector x, const PgProblem& p, int max_iter, double tol) {
  double f = p.value(x);
  double step = 1.0;
  for (int it = 0; it < max_iter; ++it) {
    const Vector g = p.grad(x);
    Vector xt;
    double ft = 0.0;
    bool accepted = false;
    for (int bt = 0; bt < 90 && step >= 1e-18; ++bt) {
      xt = p.project(x - step * g);
      ft = p.value(xt);
      const double move2 = (xt - x).squaredNorm();
      if (std::isfinite(ft) && ft <= f - 1e-4 * move2 / step) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) return x;  // fixed point at float resolution
    const double move = (xt - x).lpNorm<1>();
    x = std::move(xt);
    f = ft;
    step = std::min(step * 2.0, 1e6);
    if (move <= tol) return x;
  }
  return x;
}

double kl_value(const Vector& w, const Vector& wp) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (w[i] > 0.0) acc += w[i] * std::log(w[i] / wp[i]);
  return acc;
}

Vector kl_grad(const Vector& w, const Vector& wp) {
  Vector g(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i)
    g[i] = std::log(std::max(w[i], kTiny) / wp[i]) + 1.0;
  return g;
}

Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& w) {
  const double t = 1e-7;
  Vector g(w.size());
  Vector x = w;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    x[i] = w[i] + t;
    const double fp = f(x);
    x[i] = w[i] - t;
    const double fm = f(x);
    x[i] = w[i];
    g[i] = (fp - fm) / (2.0 * t);
  }
  return g;
}

// Distance value under the same conventions evaluate() uses for each leaf.
std::function<double(const Vector&)> leaf_distance(
    const std::variant<WassersteinSpec, MmdSpec, ChiSquaredSpec, MomentSpec>& leaf,
    const ParticleSet& prior, const ParticleSet& target) {
  if (const MmdSpec* ms = std::get_if<MmdSpec>(&leaf)) {
    const KernelMatrices k = kernel_matrices(prior.points, target.points, ms->kernel);
    const Vector v = target.weights;
    return [k, v](const Vector& w) {
      return std::sqrt(std::max(mmd_squared(w, v, k, nullptr), 0.0));
    };
  }
  if (const ChiSquaredSpec* cs = std::get_if<ChiSquaredSpec>(&leaf)) {
    const double sigma = cs->smoothing_sigma
                             ? *cs->smoothing_sigma
                             : silverman_bandwidth(target.points, target.weights);
    const Vector vt = interpolate_target_weights(prior.points, target, sigma);
    return [vt](const Vector& w) {
      return ((w - vt).array().square() / vt.array()).sum();
    };
  }
  const MomentSpec& mo = std::get<MomentSpec>(leaf);
  const Matrix a = feature_matrix(mo.features, prior.points);
  const Vector b = feature_matrix(mo.features, target.points) * target.weights;
  const MomentNorm norm = mo.norm;
  return [a, b, norm](const Vector& w) {
    const Vector delta = a * w - b;
    if (norm.kind == MomentNorm::Kind::L2) return delta.norm();
    return (delta.array().abs() / norm.scales.array()).maxCoeff();
  };
}

struct SweepOutcome {
  Vector w;
  double lambda = 0.0;
};

// Doubling bracket plus bisection on the achieved distance, each step an
// inner solve warm-started from the last solution.
SweepOutcome sweep_multiplier(const std::function<Vector(double, const Vector&)>& solve_at,
                              const std::function<double(const Vector&)>& distance,
                              const Vector& w0, double eps, double tol) {
  double lo = 0.0;
  double hi = 1.0;
  Vector warm = w0;
  Vector w_hi;
  double d_hi = std::numeric_limits<double>::infinity();
  bool bracketed = false;
  for (int k = 0; k < 60; ++k) {
    warm = solve_at(hi, warm);
    d_hi = distance(warm);
    if (d_hi <= eps) {
      bracketed = true;
      w_hi = warm;
      break;
    }
    lo = hi;
    hi *= 2.0;
  }
  if (!bracketed) throw Infeasible("reference sweep found no feasible multiplier");

  for (int it = 0; it < 200 && eps - d_hi > tol; ++it) {
    const double mid = 0.5 * (lo + hi);
    warm = solve_at(mid, warm);
    const double d_mid = distance(warm);
    if (d_mid <= eps) {
      hi = mid;
      d_hi = d_mid;
      w_hi = warm;
    } else {
      lo = mid;
    }
  }
  return {w_hi, hi};
}

}  // namespace

SynthesisResult brute_force_synthesize(const SynthesisProblem& problem) {
  validate(problem.prior);
  validate(problem.target);
  if (problem.prior.size() > 20)
    throw ConfigError("reference solver only handles small instances");
  if ((problem.prior.weights.array() <= 0.0).any())
    throw ConfigError("reference solver needs strictly positive prior weights");
  if (!(problem.epsilon > 0.0)) throw ConfigError("budget must be positive");
  const double eps = problem.epsilon;
  const Vector& wp = problem.prior.weights;
  const Eigen::Index n = problem.prior.size();

  const double d0 = evaluate(problem.metric, problem.prior, problem.target);
  SynthesisResult res;
  if (d0 <= eps) {
    res.weights = wp;
    res.achieved = d0;
    return res;
  }

  const double tol = problem.delta_rel * eps;
  const auto& var = problem.metric.variant();

  Vector w_final;
  double lambda_final = 0.0;

  if (const WassersteinSpec* ws = std::get_if<WassersteinSpec>(&var)) {
    // Plan-space projected gradient: columns carry fixed target mass, the
    // row sums are the free posterior weights.
    const Matrix c = cost_matrix(problem.prior.points, problem.target.points, ws->p);
    const double eta = resolve_eta(c, ws->sinkhorn);
    const Vector v = problem.target.weights;
    const Eigen::Index m = v.size();
    const double p_ord = ws->p;

    auto rows_of = [n, m](const Vector& gvec) {
      Vector r = Vector::Zero(n);
      for (Eigen::Index j = 0; j < m; ++j) r += gvec.segment(j * n, n);
      return r;
    };
    auto distance = [&](const Vector& gvec) {
      const Vector r = rows_of(gvec);
      const TransportPlan plan = sinkhorn_plan(r, v, c, eta, 1e-9, 20000);
      return std::pow(std::max(plan.cost, 0.0), 1.0 / p_ord);
    };
    auto solve_at = [&](double lambda, const Vector& warm) {
      PgProblem pg;
      pg.value = [&, lambda](const Vector& gvec) {
        double acc = kl_value(rows_of(gvec), wp);
        for (Eigen::Index j = 0; j < m; ++j)
          for (Eigen::Index i = 0; i < n; ++i) {
            const double gij = gvec[j * n + i];
            acc += lambda * c(i, j) * gij;
            if (gij > 0.0) acc += eta * (gij * std::log(gij) - gij);
          }
        return acc;
      };
      pg.grad = [&, lambda](const Vector& gvec) {
        const Vector r = rows_of(gvec);
        Vector g(n * m);
        for (Eigen::Index j = 0; j < m; ++j)
          for (Eigen::Index i = 0; i < n; ++i)
            g[j * n + i] = std::log(std::max(r[i], kTiny) / wp[i]) + 1.0 +
                           lambda * c(i, j) +
                           eta * std::log(std::max(gvec[j * n + i], kTiny));
        return g;
      };
      pg.project = [&](const Vector& gvec) {
        Vector out(n * m);
        for (Eigen::Index j = 0; j < m; ++j)
          out.segment(j * n, n) = project_scaled_simplex(gvec.segment(j * n, n), v[j]);
        return out;
      };
      return pg_solve(warm, pg, 20000, 1e-12);
    };

    Vector g0(n * m);
    for (Eigen::Index j = 0; j < m; ++j) g0.segment(j * n, n) = wp * v[j];
    const SweepOutcome out = sweep_multiplier(solve_at, distance, g0, eps, tol);
    w_final = rows_of(out.w);
    lambda_final = out.lambda;
  } else if (const MomentSpec* mo = std::get_if<MomentSpec>(&var);
             mo && mo->norm.kind == MomentNorm::Kind::PerComponent) {
    // Quadratic penalty on each violated bound, tightened geometrically.
    const Matrix a = feature_matrix(mo->features, problem.prior.points);
    const Vector b = feature_matrix(mo->features, problem.target.points) * problem.target.weights;
    const Vector bounds = eps * mo->norm.scales;
    auto violation = [&](const Vector& w) {
      const Vector delta = a * w - b;
      double acc = 0.0;
      for (Eigen::Index q = 0; q < delta.size(); ++q) {
        const double ex = std::abs(delta[q]) - bounds[q];
        if (ex > 0.0) acc += ex * ex;
      }
      return acc;
    };
    Vector w = wp;
    for (double pen = 10.0; pen <= 1e9; pen *= 10.0) {
      PgProblem pg;
      pg.value = [&, pen](const Vector& x) { return kl_value(x, wp) + pen * violation(x); };
      pg.grad = [&, pen](const Vector& x) {
        return Vector(kl_grad(x, wp) + pen * fd_gradient(violation, x));
      };
      pg.project = [](const Vector& x) { return project_scaled_simplex(x, 1.0); };
      w = pg_solve(w, pg, 20000, 1e-12);
    }
    const Vector delta = a * w - b;
    if ((delta.array().abs() / mo->norm.scales.array()).maxCoeff() > eps * (1.0 + 1e-3))
      throw Infeasible("penalty solve could not meet the component bounds");
    w_final = w;
    lambda_final = 0.0;
  } else {
    // One multiplier on a smooth penalty; gradients by central differences.
    std::function<double(const Vector&)> penalty;
    std::function<double(const Vector&)> distance;
    if (const MmdSpec* ms = std::get_if<MmdSpec>(&var)) {
      const KernelMatrices k = kernel_matrices(problem.prior.points, problem.target.points,
                                               ms->kernel);
      const Vector v = problem.target.weights;
      penalty = [k, v](const Vector& w) {
        return std::max(mmd_squared(w, v, k, nullptr), 0.0);
      };
      distance = [penalty](const Vector& w) { return std::sqrt(penalty(w)); };
    } else if (const ChiSquaredSpec* cs = std::get_if<ChiSquaredSpec>(&var)) {
      penalty = leaf_distance(
          std::variant<WassersteinSpec, MmdSpec, ChiSquaredSpec, MomentSpec>(*cs),
          problem.prior, problem.target);
      distance = penalty;
    } else if (const MomentSpec* ml = std::get_if<MomentSpec>(&var)) {
      const Matrix a = feature_matrix(ml->features, problem.prior.points);
      const Vector b =
          feature_matrix(ml->features, problem.target.points) * problem.target.weights;
      penalty = [a, b](const Vector& w) { return (a * w - b).squaredNorm(); };
      distance = [a, b](const Vector& w) { return (a * w - b).norm(); };
    } else {
      const HybridSpec& hy = std::get<HybridSpec>(var);
      std::vector<std::function<double(const Vector&)>> parts;
      std::vector<double> alphas;
      for (const HybridComponent& part : hy.parts) {
        if (std::holds_alternative<WassersteinSpec>(part.metric))
          throw ConfigError("reference solver does not mix transport into hybrids");
        parts.push_back(leaf_distance(part.metric, problem.prior, problem.target));
        alphas.push_back(part.weight);
      }
      penalty = [parts, alphas](const Vector& w) {
        double acc = 0.0;
        for (std::size_t k = 0; k < parts.size(); ++k) acc += alphas[k] * parts[k](w);
        return acc;
      };
      distance = penalty;
    }

    auto solve_at = [&](double lambda, const Vector& warm) {
      PgProblem pg;
      pg.value = [&, lambda](const Vector& x) {
        return kl_value(x, wp) + lambda * penalty(x);
      };
      pg.grad = [&, lambda](const Vector& x) {
        return Vector(kl_grad(x, wp) + lambda * fd_gradient(penalty, x));
      };
      pg.project = [](const Vector& x) { return project_scaled_simplex(x, 1.0); };
      return pg_solve(warm, pg, 20000, 1e-12);
    };
    const SweepOutcome out = sweep_multiplier(solve_at, distance, wp, eps, tol);
    w_final = out.w;
    lambda_final = out.lambda;
  }

  for (Eigen::Index i = 0; i < w_final.size(); ++i)
    if (w_final[i] < 1e-12) w_final[i] = 0.0;
  w_final = normalize(w_final);

  res.weights = w_final;
  res.multiplier = lambda_final;
  res.kl = kl_divergence_weights(w_final, wp);
  res.achieved =
      evaluate(problem.metric, ParticleSet{problem.prior.points, w_final}, problem.target);
  res.active = true;
  return res;
}

}  // namespace lisyn
