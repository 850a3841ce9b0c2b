#include "lisyn/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "lisyn/detail/anderson.hpp"
#include "lisyn/detail/lse.hpp"
#include "lisyn/errors.hpp"

namespace lisyn {

using detail::col_lse;
using detail::row_lse;
using detail::vec_lse;

double kl_divergence_weights(const Vector& w, const Vector& ref) {
  if (w.size() != ref.size()) throw DimensionMismatch("weight vectors differ in length");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const double wi = w[i];
    if (!std::isfinite(wi) || wi < 0.0) throw NonFinite("weights must be finite and nonnegative");
    if (wi == 0.0) continue;
    if (!(ref[i] > 0.0)) throw SupportViolation("mass placed outside the reference support");
    acc += wi * std::log(wi / ref[i]);
  }
  return std::max(acc, 0.0);
}

namespace {

constexpr double kPostClamp = 1e-12;

// Positive-mass prior atoms; the solvers never touch the rest, so dropped
// atoms keep weight zero and the posterior support cannot grow.
struct Support {
  std::vector<Eigen::Index> idx;
  Vector wp;  // still sums to one: dropped entries are exactly zero
  bool full = true;
};

Support make_support(const Vector& w) {
  Support s;
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (w[i] > 0.0) s.idx.push_back(i);
  s.full = static_cast<Eigen::Index>(s.idx.size()) == w.size();
  s.wp.resize(static_cast<Eigen::Index>(s.idx.size()));
  for (std::size_t k = 0; k < s.idx.size(); ++k)
    s.wp[static_cast<Eigen::Index>(k)] = w[s.idx[k]];
  return s;
}

Vector embed(const Vector& dense, Eigen::Index n, const Support& s) {
  if (s.full) return dense;
  Vector out = Vector::Zero(n);
  for (std::size_t k = 0; k < s.idx.size(); ++k)
    out[s.idx[k]] = dense[static_cast<Eigen::Index>(k)];
  return out;
}

PointMatrix subset_points(const PointMatrix& pts, const Support& s) {
  if (s.full) return pts;
  PointMatrix out(static_cast<Eigen::Index>(s.idx.size()), pts.cols());
  for (std::size_t k = 0; k < s.idx.size(); ++k)
    out.row(static_cast<Eigen::Index>(k)) = pts.row(s.idx[k]);
  return out;
}

// Last inner solve, so the driver can reuse the solution at the returned
// multiplier instead of solving again.
struct Cache {
  double lambda = std::numeric_limits<double>::quiet_NaN();
  Vector w;
};

// ---------------------------------------------------------------------------
// Wasserstein: alternating log-domain scaling for the plan problem
//   min_Gamma KL(Gamma 1 || wp) + lambda <C, Gamma> + eta sum Gamma(log Gamma - 1)
//   s.t. Gamma' 1 = v
// The reported discrepancy is the plain entropic transport cost between the
// resulting posterior marginal and v, matching evaluate().
// ---------------------------------------------------------------------------

struct WassersteinSolver {
  double p = 2.0;
  double eta = 0.0;
  int max_iter = 10000;
  double inner_tol = 1e-10;  // L1 movement of the posterior marginal
  // Marginal slack rho perturbs the transported cost by at most rho * max(C),
  // which keeps the evaluation well below the bisection tolerance.
  double eval_tol = 3e-8;

  std::vector<Eigen::Index> vidx;  // positive-mass target atoms
  Matrix c;                        // dense rows x dense cols
  Matrix g0;                       // -c / eta
  Matrix gl;                       // lambda * g0, reused across calls
  Matrix plan;                     // dense evaluation plan at the last eval
  Vector logwp, logv;
  Vector loga, logb;  // inner potentials, warm across multipliers
  Vector f, g;        // evaluation potentials, warm across multipliers
  Vector lser, lsec;
  Vector logr;  // posterior marginal (log) of the last inner solve

  WassersteinSolver(const ParticleSet& prior, const ParticleSet& target, const Support& sup,
                    const WassersteinSpec& spec) {
    p = spec.p;
    // eta comes from the full cost matrix so the in-loop evaluation agrees
    // with evaluate() on the original particle sets.
    const Matrix c_full = cost_matrix(prior.points, target.points, p);
    eta = resolve_eta(c_full, spec.sinkhorn);
    max_iter = spec.sinkhorn.max_iter;

    for (Eigen::Index j = 0; j < target.weights.size(); ++j)
      if (target.weights[j] > 0.0) vidx.push_back(j);
    const Eigen::Index n = static_cast<Eigen::Index>(sup.idx.size());
    const Eigen::Index m = static_cast<Eigen::Index>(vidx.size());
    c.resize(n, m);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < m; ++j) c(i, j) = c_full(sup.idx[i], vidx[j]);
    g0 = -c / eta;

    logwp = sup.wp.array().log();
    logv.resize(m);
    for (Eigen::Index j = 0; j < m; ++j) logv[j] = std::log(target.weights[vidx[j]]);

    loga = logwp;
    logb = logv;
    f = Vector::Zero(n);
    g = Vector::Zero(m);
    lser.resize(n);
    lsec.resize(m);
  }

  // Cheapest possible transported cost: every unit of target mass pays at
  // least its cheapest row.
  double cost_floor(const ParticleSet& target) const {
    double bound = 0.0;
    for (Eigen::Index j = 0; j < c.cols(); ++j)
      bound += target.weights[vidx[static_cast<std::size_t>(j)]] * c.col(j).minCoeff();
    return bound;
  }

  // Alternating scaling sweeps for the plan problem at multiplier `lambda`;
  // the row update carries the 1/(1+eta) exponent from the KL penalty on the
  // free marginal.  Iterates are Anderson-mixed: these sweeps contract slowly
  // when mass must cross between separated clusters, and the extrapolation
  // preserves the fixed point while collapsing that slow mode.  Returns the
  // last L1 movement of the posterior marginal.
  double inner_sweeps(double lambda, double tol, int iters) {
    gl = lambda * g0;
    row_lse(gl, logb, lser);
    Vector r = (loga + lser).array().exp();
    double change = std::numeric_limits<double>::infinity();
    detail::AndersonMixer mix(loga.size(), 5);
    double best = std::numeric_limits<double>::infinity();
    for (int it = 0; it < iters; ++it) {
      col_lse(gl, loga, lsec);
      logb = logv - lsec;
      row_lse(gl, logb, lser);
      const Vector ta = (logwp - lser) / (1.0 + eta);
      logr = ta + lser;
      Vector r_new = logr.array().exp();
      change = (r_new - r).lpNorm<1>();
      r.swap(r_new);
      if (change <= tol) {
        loga = ta;
        break;
      }
      if (change < best) best = change;
      Vector prop = mix.propose(loga, ta);
      if (!prop.allFinite() || change > 10.0 * best) {
        mix.reset();
        best = change;
        prop = ta;
      }
      loga = prop;
    }
    return change;
  }

  const Vector& solve_inner(double lambda) {
    double change = inner_sweeps(lambda, inner_tol, 500);
    if (!(change <= inner_tol)) {
      // Cold starts and large multiplier jumps converge slowly once the
      // effective regularizer eta/lambda is small; a continuation ramp in
      // lambda keeps every stage warm.
      loga = logwp;
      logb = logv;
      for (int s = 6; s >= 1; --s) inner_sweeps(std::ldexp(lambda, -s), 1e-6, 500);
      change = inner_sweeps(lambda, inner_tol, max_iter);
    }
    if (!(change <= inner_tol))
      throw NoConvergence("transport reweighting fixed point stalled");
    return logr;
  }

  // One batch of balanced scaling sweeps for the evaluation plan with kernel
  // exponents `kmat`, Anderson-mixed like the inner sweeps; returns the L1
  // row-marginal residual reached.
  double eval_sweeps(const Matrix& kmat, const Vector& logr_in, const Vector& r, double tol,
                     int iters) {
    row_lse(kmat, g, lser);
    double resid = std::numeric_limits<double>::infinity();
    detail::AndersonMixer mix(g.size(), 5);
    double best = std::numeric_limits<double>::infinity();
    for (int it = 0; it < iters; ++it) {
      f = logr_in - lser;
      col_lse(kmat, f, lsec);
      const Vector tg = logv - lsec;
      row_lse(kmat, tg, lser);
      resid = ((f + lser).array().exp() - r.array()).abs().sum();
      if (resid <= tol) {
        g = tg;
        break;
      }
      if (resid < best) best = resid;
      const Vector prop = mix.propose(g, tg);
      if (!prop.allFinite() || resid > 10.0 * best) {
        mix.reset();
        best = resid;
        g = tg;  // lser already matches tg
      } else {
        g = prop;
        row_lse(kmat, g, lser);
      }
    }
    return resid;
  }

  // Entropic plan between (r, v) with both marginals fixed; returns the
  // transported cost and leaves the plan in `plan`.
  double eval_cost(const Vector& logr_in) {
    const Vector r = logr_in.array().exp();
    double resid = eval_sweeps(g0, logr_in, r, eval_tol, 500);
    // The mixer occasionally plateaus a hair above tolerance; a second batch
    // from the same potentials restarts its history and usually finishes.
    if (!(resid <= eval_tol)) resid = eval_sweeps(g0, logr_in, r, eval_tol, 500);
    if (!(resid <= eval_tol)) {
      // Anneal the regularizer from ~cmax/3 down to eta, halving per stage.
      // The dual potentials scale like 1/eta, so each stage starts from the
      // doubled potentials of the previous one and converges in tens of
      // sweeps where a cold solve at eta would need tens of thousands.
      const double cmax = c.maxCoeff();
      int stages = 0;
      while (eta * std::ldexp(1.0, stages + 1) < cmax / 3.0 && stages < 40) ++stages;
      f.setZero();
      g.setZero();
      Matrix ks;
      for (int s = stages; s >= 1; --s) {
        ks = g0 / std::ldexp(1.0, s);
        eval_sweeps(ks, logr_in, r, 1e-4, 500);
        f *= 2.0;
        g *= 2.0;
      }
      resid = eval_sweeps(g0, logr_in, r, eval_tol, max_iter);
    }
    if (!(resid <= eval_tol)) throw NoConvergence("transport evaluation stalled");
    plan = ((g0.colwise() + f).rowwise() + g.transpose()).array().exp().matrix();
    return std::max((plan.array() * c.array()).sum(), 0.0);
  }

  TransportPlan embedded_plan(Eigen::Index n_full, Eigen::Index m_full, const Support& sup) const {
    TransportPlan out;
    out.cost = std::max((plan.array() * c.array()).sum(), 0.0);
    out.gamma = Matrix::Zero(n_full, m_full);
    for (Eigen::Index i = 0; i < plan.rows(); ++i)
      for (Eigen::Index j = 0; j < plan.cols(); ++j)
        out.gamma(sup.idx[static_cast<std::size_t>(i)], vidx[static_cast<std::size_t>(j)]) =
            plan(i, j);
    return out;
  }
};

// Unique minimizer of KL(w || wp) + penalty(w) over the simplex, solved in
// softmax coordinates w = softmax(z).  The reparameterization removes the
// constraint, the objective is convex in w, and the entropy term keeps the
// optimum strictly interior, so every stationary point in z is the global
// optimum.  Damped multiplicative fixed-point iteration also solves these
// problems but needs step sizes ~1/(lambda |K|) and stalls for thousands of
// atoms; the quasi-Newton solve reaches multiplier-level accuracy in a few
// hundred gradient evaluations and warm-starts across the outer bisection.
Vector min_kl_plus_penalty(const Vector& w_start, const Vector& wp,
                           const std::function<double(const Vector&, Vector&)>& penalty,
                           const char* stall_message) {
  const Eigen::Index n = wp.size();
  Vector pg(n);
  auto value_and_grad = [&](const Vector& z, Vector& grad) {
    Vector w = (z.array() - z.maxCoeff()).exp().max(1e-290).matrix();
    w /= w.sum();
    const double pen = penalty(w, pg);
    double kl = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) kl += w[i] * std::log(w[i] / wp[i]);
    const Vector r = ((w.array() / wp.array()).log() + 1.0).matrix() + pg;
    grad = w.cwiseProduct((r.array() - w.dot(r)).matrix());
    return kl + pen;
  };
  QuasiNewtonConfig qn;
  qn.max_iter = 4000;
  qn.grad_tol = 1e-11;
  qn.accept_stall = true;
  const Vector z0 = w_start.array().max(1e-290).log().matrix();
  const QuasiNewtonResult qr = quasi_newton_minimize(value_and_grad, z0, qn);
  // The z gradient is w_i (r_i - mean r), so this bounds the stationarity
  // defect of every atom carrying meaningful mass.
  if (!qr.converged && qr.gradient.lpNorm<Eigen::Infinity>() > 1e-7)
    throw NoConvergence(stall_message);
  Vector w = (qr.x.array() - qr.x.maxCoeff()).exp().max(1e-290).matrix();
  w /= w.sum();
  return w;
}

// Rank-revealing partial Cholesky K ~= B B' for a symmetric PSD matrix,
// pivoting on the largest residual diagonal.  Stops once every residual
// diagonal is below tol, so |K - B B'|_max <= tol.
Matrix pivoted_cholesky(const Matrix& k, double tol) {
  const Eigen::Index n = k.rows();
  Vector d = k.diagonal();
  Matrix b(n, n);
  Eigen::Index m = 0;
  for (; m < n; ++m) {
    Eigen::Index piv = 0;
    const double dmax = d.maxCoeff(&piv);
    if (!(dmax > tol)) break;
    Vector col = k.col(piv);
    if (m > 0) col.noalias() -= b.leftCols(m) * b.row(piv).head(m).transpose();
    b.col(m) = col / std::sqrt(dmax);
    d -= b.col(m).cwiseAbs2();
    d = d.cwiseMax(0.0);
  }
  return b.leftCols(m);
}

// Minimizer of KL(w || wp) + lambda (w'Kw - 2 w'k) over the simplex for a PSD
// quadratic K = B B' of rank m.  Lagrangian duality in u = B'w reduces the
// problem to maximizing the strongly concave m-dimensional dual
//   G(nu) = -log sum_i wp_i exp(2 lambda k_i - (B nu)_i) - |nu|^2 / (4 lambda)
// whose unique maximizer gives back w ~ wp exp(2 lambda k - B nu).  Newton
// with the explicit m x m Hessian converges in a handful of steps, and the
// dual variable warm-starts across multiplier values (nu* = 2 lambda B'w*
// scales linearly in lambda near a fixed primal solution).
struct QuadPenaltyDual {
  Matrix b;     // n x m factor of the quadratic
  Vector lin;   // linear coefficient k
  Vector logwp;
  Vector nu;
  double lambda_prev = 0.0;
  Vector w;

  void init(Matrix factor, const Vector& wp, Vector k) {
    b = std::move(factor);
    lin = std::move(k);
    logwp = wp.array().max(1e-300).log().matrix();
    nu = Vector::Zero(b.cols());
    w = wp;
  }

  const Vector& solve(double lambda) {
    if (!(lambda > 0.0)) {
      w = logwp.array().exp().matrix();
      w /= w.sum();
      return w;
    }
    if (lambda_prev > 0.0) nu *= lambda / lambda_prev;
    lambda_prev = lambda;
    auto dual = [&](const Vector& v, Vector& prim) {
      const Vector t = logwp + 2.0 * lambda * lin - b * v;
      const double lse = vec_lse(t);
      prim = (t.array() - lse).exp().matrix();
      return -lse - v.squaredNorm() / (4.0 * lambda);
    };
    double gval = dual(nu, w);
    bool done = false;
    for (int iter = 0; iter < 100; ++iter) {
      const Vector bw = b.transpose() * w;
      const Vector g = bw - nu / (2.0 * lambda);
      if (g.lpNorm<Eigen::Infinity>() <= 1e-12 * (1.0 + bw.cwiseAbs().maxCoeff())) {
        done = true;
        break;
      }
      Matrix h = b.transpose() * w.asDiagonal() * b;
      h.noalias() -= bw * bw.transpose();
      h.diagonal().array() += 1.0 / (2.0 * lambda);
      const Vector dn = h.llt().solve(g);
      const double slope = g.dot(dn);
      double step = 1.0;
      bool accepted = false;
      Vector wt;
      for (int bt = 0; bt < 60; ++bt, step *= 0.5) {
        const Vector nt = nu + step * dn;
        const double gv = dual(nt, wt);
        if (std::isfinite(gv) && gv >= gval + 1e-4 * step * slope) {
          nu = nt;
          w = wt;
          gval = gv;
          accepted = true;
          break;
        }
      }
      if (!accepted) break;  // flat to working precision near the optimum
    }
    if (!done) {
      const Vector g = b.transpose() * w - nu / (2.0 * lambda);
      if (g.lpNorm<Eigen::Infinity>() > 1e-8)
        throw NoConvergence("dual ascent for the reweighting stalled");
    }
    return w;
  }
};

// ---------------------------------------------------------------------------
// MMD: minimize KL(w || wp) + lambda MMD^2(w, v)
// ---------------------------------------------------------------------------

struct MmdSolver {
  Matrix kxx;
  Vector kxzv;
  double c0 = 0.0;
  Vector wp;
  Vector w_warm;
  QuadPenaltyDual dual;

  MmdSolver(const ParticleSet& prior, const ParticleSet& target, const Support& sup,
            const MmdSpec& spec) {
    const PointMatrix pts = subset_points(prior.points, sup);
    const KernelMatrices km = kernel_matrices(pts, target.points, spec.kernel);
    kxx = km.kxx;
    kxzv = km.kxz * target.weights;
    c0 = target.weights.dot(km.kzz * target.weights);
    wp = sup.wp;
    w_warm = wp;
    Matrix full = kxx.selfadjointView<Eigen::Lower>();
    dual.init(pivoted_cholesky(full, 1e-12 * full.diagonal().maxCoeff()), wp, kxzv);
  }

  double mmd2(const Vector& w, Vector* grad) const {
    const Vector kw = kxx.selfadjointView<Eigen::Lower>() * w;
    if (grad) *grad = 2.0 * (kw - kxzv);
    return w.dot(kw) - 2.0 * w.dot(kxzv) + c0;
  }

  const Vector& solve(double lambda, const MirrorDescentConfig&) {
    w_warm = dual.solve(lambda);
    return w_warm;
  }
};

// ---------------------------------------------------------------------------
// Chi-squared: per-atom Newton in log w nested in a Newton search for the
// normalizing constant.  Stationarity: log(w_i/wp_i) + 2 lambda w_i/vt_i = c.
// ---------------------------------------------------------------------------

struct Chi2Solver {
  Vector vt;  // smoothed target weights on the solver support
  double floor_add = 0.0;  // chi^2 mass of dropped zero-weight atoms
  Vector logwp;
  Vector t;  // warm log-weights
  double c_warm = 0.0;
  bool warm = false;

  Chi2Solver(const ParticleSet& prior, const ParticleSet& target, const Support& sup,
             const ChiSquaredSpec& spec) {
    const double sigma = spec.smoothing_sigma
                             ? *spec.smoothing_sigma
                             : silverman_bandwidth(target.points, target.weights);
    const Vector vt_full = interpolate_target_weights(prior.points, target, sigma);
    vt.resize(static_cast<Eigen::Index>(sup.idx.size()));
    for (std::size_t k = 0; k < sup.idx.size(); ++k)
      vt[static_cast<Eigen::Index>(k)] = vt_full[sup.idx[k]];
    floor_add = vt_full.sum() - vt.sum();
    logwp = sup.wp.array().log();
  }

  // Solves t_i + beta_i e^{t_i} = c + log wp_i for every atom.  The residual
  // is convex and increasing in t, so after one step every iterate sits on
  // the right of its root and Newton descends monotonically.
  void inner_newton(const Vector& beta, double c, Vector& ti) const {
    const Vector kappa = logwp.array() + c;
    for (int k = 0; k < 120; ++k) {
      const Vector et = ti.array().exp();
      const Vector g = ti + beta.cwiseProduct(et) - kappa;
      const double scale = 1.0 + std::abs(c) + ti.cwiseAbs().maxCoeff();
      if (g.cwiseAbs().maxCoeff() <= 1e-13 * scale) return;
      ti -= g.cwiseQuotient((1.0 + (beta.array() * et.array())).matrix());
      // Roots are log-weights, hence negative; the clamp only cuts off a
      // left-side overshoot before it can overflow the exponential.
      ti = ti.cwiseMin(1.0);
    }
    throw NoConvergence("per-atom weight equations stalled");
  }

  // w(lambda) and the chi-squared value it achieves (dropped atoms included).
  double solve(double lambda, Vector& w) {
    const Vector beta = (2.0 * lambda) * vt.cwiseInverse();
    if (!warm) {
      t = logwp;
      c_warm = 0.0;
      warm = true;
    }
    double c = c_warm;
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    bool done = false;
    for (int outer = 0; outer < 200; ++outer) {
      inner_newton(beta, c, t);
      w = t.array().exp();
      const double r = w.sum() - 1.0;
      // The per-atom solves have a relative noise floor near 1e-13, so the
      // sum over thousands of atoms cannot be normalized much past 1e-10; the
      // final rescale removes what is left.
      if (std::abs(r) <= 1e-10) {
        done = true;
        break;
      }
      if (r > 0.0)
        hi = std::min(hi, c);
      else
        lo = std::max(lo, c);
      const double sp = (w.array() / (1.0 + (beta.array() * w.array()))).sum();
      double cn = c - r / std::max(sp, 1e-300);
      if (!std::isfinite(cn) || cn <= lo || cn >= hi) {
        if (std::isfinite(lo) && std::isfinite(hi))
          cn = 0.5 * (lo + hi);
        else
          cn = c + (r > 0.0 ? -1.0 : 1.0) * std::max(1.0, std::abs(c));
      }
      c = cn;
    }
    if (!done) throw NoConvergence("weight normalization stalled");
    c_warm = c;
    w /= w.sum();
    return ((w - vt).array().square() / vt.array()).sum() + floor_add;
  }
};

// ---------------------------------------------------------------------------
// Moment constraints, Euclidean norm: minimize
// KL(w || wp) + lambda ||A w - b||^2
// ---------------------------------------------------------------------------

struct MomentL2Solver {
  Matrix a;  // Q x n
  Vector b;
  Vector wp;
  Vector w_warm;
  QuadPenaltyDual dual;

  MomentL2Solver(const ParticleSet& prior, const ParticleSet& target, const Support& sup,
                 const MomentSpec& spec) {
    a = feature_matrix(spec.features, subset_points(prior.points, sup));
    b = feature_matrix(spec.features, target.points) * target.weights;
    wp = sup.wp;
    w_warm = wp;
    // |Aw - b|^2 = w'(A'A)w - 2 w'(A'b) + |b|^2, so the factor is A' itself.
    dual.init(a.transpose(), wp, a.transpose() * b);
  }

  const Vector& solve(double lambda, const MirrorDescentConfig&) {
    w_warm = dual.solve(lambda);
    return w_warm;
  }
};

// ---------------------------------------------------------------------------
// Moment constraints, per-component norm.  The weighted-sup budget
// max_q |delta_q|/c_q <= eps is handled exactly through its dual
//   max_nu  -log Z(nu) - nu'b - eps sum_q c_q |nu_q|,
// concave in nu, solved by an active-set Newton method.  The scalar
// multiplier of the equivalent single-budget problem is sum_q c_q |nu_q|.
// ---------------------------------------------------------------------------

struct PerComponentSolver {
  Matrix a;  // Q x n
  Vector b;
  Vector logwp;
  Vector scales;
  double eps = 0.0;

  Vector nu;
  Vector w;
  double lambda = 0.0;

  PerComponentSolver(const ParticleSet& prior, const ParticleSet& target, const Support& sup,
                     const MomentSpec& spec, double eps_in) {
    a = feature_matrix(spec.features, subset_points(prior.points, sup));
    b = feature_matrix(spec.features, target.points) * target.weights;
    logwp = sup.wp.array().log();
    scales = spec.norm.scales;
    eps = eps_in;
  }

  void weights_for(const Vector& nu_in, Vector& w_out, Vector& delta) const {
    Vector logits = logwp - a.transpose() * nu_in;
    logits.array() -= vec_lse(logits);
    w_out = logits.array().exp();
    delta = a * w_out - b;
  }

  double dual_value(const Vector& nu_in) const {
    const Vector logits = logwp - a.transpose() * nu_in;
    return -vec_lse(logits) - nu_in.dot(b) - eps * scales.dot(nu_in.cwiseAbs());
  }

  // Equality Newton on the current face: delta_q = eps c_q sgn_q for the
  // active components, with ascent backtracking on the dual value.
  void newton_on_face(const std::vector<int>& act, const std::vector<double>& sgn,
                      Vector& delta) {
    const int m = static_cast<int>(act.size());
    const double tol =
        1e-11 * (1.0 + b.cwiseAbs().maxCoeff() + eps * scales.maxCoeff());
    Matrix aact(m, a.cols());
    Vector target_d(m);
    for (int k = 0; k < m; ++k) {
      aact.row(k) = a.row(act[static_cast<std::size_t>(k)]);
      target_d[k] = eps * scales[act[static_cast<std::size_t>(k)]] * sgn[static_cast<std::size_t>(k)];
    }
    for (int it = 0; it < 100; ++it) {
      weights_for(nu, w, delta);
      Vector e(m);
      for (int k = 0; k < m; ++k) e[k] = delta[act[static_cast<std::size_t>(k)]] - target_d[k];
      if (e.cwiseAbs().maxCoeff() <= tol) return;

      const Vector mu = aact * w;
      Matrix cov = aact * w.asDiagonal() * aact.transpose() - mu * mu.transpose();
      const double ridge = 1e-12 * (cov.trace() / m) + 1e-300;
      cov.diagonal().array() += ridge;
      const Vector dnu = cov.ldlt().solve(e);
      if (!dnu.allFinite()) throw NonFinite("singular feature covariance");

      const double q0 = dual_value(nu);
      double step = 1.0;
      bool accepted = false;
      for (int bt = 0; bt < 60; ++bt) {
        Vector nu_try = nu;
        for (int k = 0; k < m; ++k) nu_try[act[static_cast<std::size_t>(k)]] += step * dnu[k];
        const double qv = dual_value(nu_try);
        if (std::isfinite(qv) && qv >= q0 - 1e-12 * (1.0 + std::abs(q0))) {
          nu = nu_try;
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) throw NoConvergence("dual ascent stalled");
      if (nu.cwiseAbs().maxCoeff() > 1e12)
        throw Infeasible("component budget unreachable on this support");
    }
    throw NoConvergence("component equalities did not converge");
  }

  void solve() {
    const Eigen::Index q = b.size();
    nu = Vector::Zero(q);
    Vector delta;
    weights_for(nu, w, delta);

    std::vector<int> act;
    std::vector<double> sgn;
    for (Eigen::Index k = 0; k < q; ++k)
      if (std::abs(delta[k]) > eps * scales[k]) {
        act.push_back(static_cast<int>(k));
        sgn.push_back(delta[k] > 0.0 ? 1.0 : -1.0);
      }

    const int max_outer = 8 * static_cast<int>(q) + 16;
    for (int outer = 0; outer < max_outer; ++outer) {
      if (!act.empty()) newton_on_face(act, sgn, delta);
      else weights_for(nu, w, delta);

      // A multiplier that crossed zero leaves the face.
      int drop = -1;
      double worst = -1e-12;
      for (std::size_t k = 0; k < act.size(); ++k) {
        const double v = sgn[k] * nu[act[k]];
        if (v < worst) {
          worst = v;
          drop = static_cast<int>(k);
        }
      }
      if (drop >= 0) {
        nu[act[static_cast<std::size_t>(drop)]] = 0.0;
        act.erase(act.begin() + drop);
        sgn.erase(sgn.begin() + drop);
        continue;
      }

      // Most violated inactive component joins the face.
      int add = -1;
      double excess = 1e-9;
      for (Eigen::Index k = 0; k < q; ++k) {
        if (std::find(act.begin(), act.end(), static_cast<int>(k)) != act.end()) continue;
        const double e = std::abs(delta[k]) / (eps * scales[k]) - 1.0;
        if (e > excess) {
          excess = e;
          add = static_cast<int>(k);
        }
      }
      if (add >= 0) {
        act.push_back(add);
        sgn.push_back(delta[add] > 0.0 ? 1.0 : -1.0);
        continue;
      }

      lambda = scales.dot(nu.cwiseAbs());
      return;
    }
    throw NoConvergence("active component set kept cycling");
  }
};

// ---------------------------------------------------------------------------
// Hybrid: one multiplier on the weighted sum of component discrepancies,
// solved by mirror descent on the combined gradient.
// ---------------------------------------------------------------------------

struct HybridLeaf {
  double alpha = 0.0;
  int kind = 0;  // 0 mmd, 1 chi2, 2 moment-l2
  Matrix kxx;
  Vector kxzv;
  double c0 = 0.0;
  Vector vt;
  double floor_add = 0.0;
  Matrix a;
  Vector b;

  double value_grad(const Vector& w, Vector* grad) const {
    switch (kind) {
      case 0: {
        const Vector kw = kxx.selfadjointView<Eigen::Lower>() * w;
        const double m2 = w.dot(kw) - 2.0 * w.dot(kxzv) + c0;
        const double d = std::sqrt(std::max(m2, 0.0));
        if (grad) *grad = (kw - kxzv) / std::max(d, 1e-12);
        return d;
      }
      case 1: {
        if (grad) *grad = (2.0 * (w - vt).array() / vt.array()).matrix();
        return ((w - vt).array().square() / vt.array()).sum() + floor_add;
      }
      default: {
        const Vector delta = a * w - b;
        const double d = delta.norm();
        if (grad) *grad = a.transpose() * delta / std::max(d, 1e-12);
        return d;
      }
    }
  }
};

struct HybridSolver {
  std::vector<HybridLeaf> leaves;
  Vector wp;
  Vector w_warm;

  HybridSolver(const ParticleSet& prior, const ParticleSet& target, const Support& sup,
               const HybridSpec& spec) {
    if (spec.parts.empty()) throw ConfigError("hybrid metric needs at least one component");
    const PointMatrix pts = subset_points(prior.points, sup);
    for (const HybridComponent& part : spec.parts) {
      HybridLeaf leaf;
      leaf.alpha = part.weight;
      if (const MmdSpec* ms = std::get_if<MmdSpec>(&part.metric)) {
        leaf.kind = 0;
        const KernelMatrices km = kernel_matrices(pts, target.points, ms->kernel);
        leaf.kxx = km.kxx;
        leaf.kxzv = km.kxz * target.weights;
        leaf.c0 = target.weights.dot(km.kzz * target.weights);
      } else if (const ChiSquaredSpec* cs = std::get_if<ChiSquaredSpec>(&part.metric)) {
        leaf.kind = 1;
        const double sigma = cs->smoothing_sigma
                                 ? *cs->smoothing_sigma
                                 : silverman_bandwidth(target.points, target.weights);
        const Vector vt_full = interpolate_target_weights(prior.points, target, sigma);
        leaf.vt.resize(static_cast<Eigen::Index>(sup.idx.size()));
        for (std::size_t k = 0; k < sup.idx.size(); ++k)
          leaf.vt[static_cast<Eigen::Index>(k)] = vt_full[sup.idx[k]];
        leaf.floor_add = vt_full.sum() - leaf.vt.sum();
      } else if (const MomentSpec* mo = std::get_if<MomentSpec>(&part.metric)) {
        if (mo->norm.kind != MomentNorm::Kind::L2)
          throw ConfigError("hybrid synthesis supports only the Euclidean moment norm");
        leaf.kind = 2;
        leaf.a = feature_matrix(mo->features, pts);
        leaf.b = feature_matrix(mo->features, target.points) * target.weights;
      } else {
        throw ConfigError("hybrid synthesis does not support transport components");
      }
      leaves.push_back(std::move(leaf));
    }
    wp = sup.wp;
    w_warm = wp;
  }

  double total(const Vector& w, Vector* grad) const {
    double d = 0.0;
    Vector gk;
    if (grad) grad->setZero(w.size());
    for (const HybridLeaf& leaf : leaves) {
      d += leaf.alpha * leaf.value_grad(w, grad ? &gk : nullptr);
      if (grad) *grad += leaf.alpha * gk;
    }
    return d;
  }

  const Vector& solve(double lambda, const MirrorDescentConfig&) {
    auto penalty = [&](const Vector& w, Vector& pg) {
      const double val = total(w, &pg);
      pg *= lambda;
      return lambda * val;
    };
    w_warm = min_kl_plus_penalty(w_warm, wp, penalty,
                                 "hybrid reweighting did not converge");
    return w_warm;
  }
};

double lambda_hi_hint(const DiscrepancySpec& metric, double eps) {
  const auto& var = metric.variant();
  if (const WassersteinSpec* ws = std::get_if<WassersteinSpec>(&var))
    return std::max(1.0, 1.0 / std::pow(eps, ws->p));
  if (std::holds_alternative<MmdSpec>(var)) return std::max(1.0, 1.0 / (eps * eps));
  if (std::holds_alternative<ChiSquaredSpec>(var)) return std::max(1.0, 1.0 / eps);
  if (std::holds_alternative<MomentSpec>(var)) return std::max(1.0, 1.0 / (eps * eps));
  return std::max({1.0, 1.0 / eps, 1.0 / (eps * eps)});
}

}  // namespace

SynthesisResult synthesize(const SynthesisProblem& problem) {
  validate(problem.prior);
  validate(problem.target);
  if (problem.prior.dim() != problem.target.dim())
    throw DimensionMismatch("prior and target dimensions differ");
  if (!(problem.epsilon > 0.0)) throw ConfigError("budget must be positive");
  const double eps = problem.epsilon;

  const double d0 = evaluate(problem.metric, problem.prior, problem.target);
  SynthesisResult res;
  if (d0 <= eps) {
    res.weights = problem.prior.weights;
    res.achieved = d0;
    return res;
  }

  const Support sup = make_support(problem.prior.weights);
  const Eigen::Index n_full = problem.prior.size();

  RootFindConfig root = problem.root;
  root.delta = problem.delta_rel * eps;
  if (root.lambda_hi == RootFindConfig{}.lambda_hi)
    root.lambda_hi = lambda_hi_hint(problem.metric, eps);

  Cache cache;
  const auto& var = problem.metric.variant();

  auto run_bisection = [&](const std::function<double(double)>& residual) {
    try {
      return bisect_multiplier(residual, root);
    } catch (const BracketFailure&) {
      throw Infeasible("budget unreachable by reweighting this support");
    }
  };

  if (const WassersteinSpec* ws = std::get_if<WassersteinSpec>(&var)) {
    WassersteinSolver solver(problem.prior, problem.target, sup, *ws);
    if (std::pow(eps, solver.p) < solver.cost_floor(problem.target) * (1.0 - 1e-12))
      throw Infeasible("budget below the cheapest transport to the target");
    auto residual = [&](double lambda) {
      if (lambda == 0.0) return d0 - eps;
      const Vector& logr = solver.solve_inner(lambda);
      const double cost = solver.eval_cost(logr);
      cache.lambda = lambda;
      cache.w = logr.array().exp();
      return std::pow(cost, 1.0 / solver.p) - eps;
    };
    res.multiplier = run_bisection(residual);
    if (cache.lambda != res.multiplier) residual(res.multiplier);
    res.plan = solver.embedded_plan(n_full, problem.target.size(), sup);
  } else if (const MmdSpec* ms = std::get_if<MmdSpec>(&var)) {
    MmdSolver solver(problem.prior, problem.target, sup, *ms);
    auto residual = [&](double lambda) {
      if (lambda == 0.0) return d0 - eps;
      const Vector& w = solver.solve(lambda, problem.inner);
      cache.lambda = lambda;
      cache.w = w;
      return std::sqrt(std::max(solver.mmd2(w, nullptr), 0.0)) - eps;
    };
    res.multiplier = run_bisection(residual);
    if (cache.lambda != res.multiplier) residual(res.multiplier);
  } else if (const ChiSquaredSpec* cs = std::get_if<ChiSquaredSpec>(&var)) {
    Chi2Solver solver(problem.prior, problem.target, sup, *cs);
    auto residual = [&](double lambda) {
      if (lambda == 0.0) return d0 - eps;
      Vector w;
      const double value = solver.solve(lambda, w);
      cache.lambda = lambda;
      cache.w = std::move(w);
      return value - eps;
    };
    res.multiplier = run_bisection(residual);
    if (cache.lambda != res.multiplier) residual(res.multiplier);
  } else if (const MomentSpec* mo = std::get_if<MomentSpec>(&var)) {
    if (mo->norm.kind == MomentNorm::Kind::L2) {
      MomentL2Solver solver(problem.prior, problem.target, sup, *mo);
      auto residual = [&](double lambda) {
        if (lambda == 0.0) return d0 - eps;
        const Vector& w = solver.solve(lambda, problem.inner);
        cache.lambda = lambda;
        cache.w = w;
        return std::sqrt(std::max(moment_sqnorm(w, solver.a, solver.b, nullptr), 0.0)) - eps;
      };
      res.multiplier = run_bisection(residual);
      if (cache.lambda != res.multiplier) residual(res.multiplier);
    } else {
      PerComponentSolver solver(problem.prior, problem.target, sup, *mo, eps);
      solver.solve();
      cache.lambda = solver.lambda;
      cache.w = solver.w;
      res.multiplier = solver.lambda;
      res.component_multipliers = solver.nu;
    }
  } else {
    HybridSolver solver(problem.prior, problem.target, sup, std::get<HybridSpec>(var));
    auto residual = [&](double lambda) {
      if (lambda == 0.0) return d0 - eps;
      const Vector& w = solver.solve(lambda, problem.inner);
      cache.lambda = lambda;
      cache.w = w;
      return solver.total(w, nullptr) - eps;
    };
    res.multiplier = run_bisection(residual);
    if (cache.lambda != res.multiplier) residual(res.multiplier);
  }

  Vector w = embed(cache.w, n_full, sup);
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (w[i] < kPostClamp) w[i] = 0.0;
  w = normalize(w);

  res.weights = w;
  res.kl = kl_divergence_weights(w, problem.prior.weights);
  res.achieved =
      evaluate(problem.metric, ParticleSet{problem.prior.points, w}, problem.target);
  res.active = true;
  return res;
}

SynthesisResult exponential_tilt(const ParticleSet& prior_errors, double eps) {
  validate(prior_errors);
  if (!(eps > 0.0)) throw ConfigError("error budget must be positive");
  const Vector& wp = prior_errors.weights;
  const Vector e2_full = prior_errors.points.rowwise().squaredNorm();

  const Support sup = make_support(wp);
  Vector e2(sup.wp.size());
  for (std::size_t k = 0; k < sup.idx.size(); ++k)
    e2[static_cast<Eigen::Index>(k)] = e2_full[sup.idx[k]];
  const Vector logwp = sup.wp.array().log();

  SynthesisResult res;
  const double phi0 = sup.wp.dot(e2);
  if (phi0 <= eps * eps) {
    res.weights = wp;
    res.achieved = std::sqrt(std::max(phi0, 0.0));
    return res;
  }
  if (eps * eps < e2.minCoeff())
    throw Infeasible("budget below the smallest attainable error");

  Vector w_dense;
  auto residual = [&](double lambda) {
    Vector logits = logwp - lambda * e2;
    logits.array() -= vec_lse(logits);
    w_dense = logits.array().exp();
    return w_dense.dot(e2) - eps * eps;
  };

  RootFindConfig cfg;
  cfg.delta = 1e-4 * eps * eps;
  double lambda = std::numeric_limits<double>::quiet_NaN();
  for (int round = 0; round < 6 && !std::isfinite(lambda); ++round) {
    try {
      lambda = bisect_multiplier(residual, cfg);
    } catch (const BracketFailure&) {
      // The whole bracket proved insufficient; restart three decades higher.
      cfg.lambda_lo = cfg.lambda_hi * double(1 << 10);
      cfg.lambda_hi = 2.0 * cfg.lambda_lo;
    }
  }
  if (!std::isfinite(lambda))
    throw Infeasible("budget unreachable within the multiplier range");
  residual(lambda);

  res.weights = embed(w_dense, wp.size(), sup);
  res.multiplier = lambda;
  res.achieved = std::sqrt(std::max(w_dense.dot(e2), 0.0));
  res.kl = kl_divergence_weights(res.weights, wp);
  res.active = true;
  return res;
}

}  // namespace lisyn
