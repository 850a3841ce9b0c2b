#ifndef LISYN_DETAIL_LSE_HPP
#define LISYN_DETAIL_LSE_HPP

#include <cmath>
#include <limits>

#include "lisyn/particles.hpp"

namespace lisyn::detail {

// out_i = LSE_j(g_ij + b_j), max-shifted.  Column-at-a-time over the
// column-major storage so the exponentials vectorize.
inline void row_lse(const Matrix& g, const Vector& b, Vector& out) {
  const Eigen::Index n = g.rows(), m = g.cols();
  Vector mx = Vector::Constant(n, -std::numeric_limits<double>::infinity());
  for (Eigen::Index j = 0; j < m; ++j)
    mx = mx.array().max(g.col(j).array() + b[j]).matrix();
  Vector acc = Vector::Zero(n);
  for (Eigen::Index j = 0; j < m; ++j)
    acc.array() += (g.col(j).array() + b[j] - mx.array()).exp();
  out = acc.array().log() + mx.array();
}

// out_j = LSE_i(g_ij + a_i), max-shifted.
inline void col_lse(const Matrix& g, const Vector& a, Vector& out) {
  const Eigen::Index m = g.cols();
  out.resize(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto t = g.col(j).array() + a.array();
    const double mx = t.maxCoeff();
    out[j] = mx + std::log((t - mx).exp().sum());
  }
}

// LSE of a plain vector.
inline double vec_lse(const Vector& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace lisyn::detail

#endif
