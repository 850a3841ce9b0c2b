#ifndef LISYN_DETAIL_ANDERSON_HPP
#define LISYN_DETAIL_ANDERSON_HPP

#include <algorithm>

#include "lisyn/particles.hpp"

namespace lisyn::detail {

// Anderson mixing for fixed-point sweeps x -> T(x).  Keeps the last `depth`
// iterate/residual difference pairs and extrapolates through a ridge-damped
// least-squares fit of the residual history; while the history is empty the
// proposal is the plain image.  Callers should reset() and fall back to T(x)
// whenever a proposal misbehaves (non-finite or residual blow-up).
class AndersonMixer {
 public:
  AndersonMixer(Eigen::Index dim, int depth)
      : dx_(dim, depth), dr_(dim, depth), x_prev_(dim), r_prev_(dim) {}

  void reset() { count_ = 0; }

  Vector propose(const Vector& x, const Vector& tx) {
    const int depth = static_cast<int>(dx_.cols());
    const Vector r = tx - x;
    Vector out = tx;
    if (count_ > 0) {
      // Difference pairs live in a ring; the least-squares fit is order-free.
      const int slot = (count_ - 1) % depth;
      dx_.col(slot) = x - x_prev_;
      dr_.col(slot) = r - r_prev_;
      const int m = std::min(count_, depth);
      // gamma = argmin |r - DR gamma|^2 with a small ridge; the update is
      // x+ = T(x) - (DX + DR) gamma.
      Matrix gram(m, m);
      Vector rhs(m);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j <= i; ++j) gram(i, j) = gram(j, i) = dr_.col(i).dot(dr_.col(j));
        rhs[i] = dr_.col(i).dot(r);
      }
      gram.diagonal().array() += 1e-12 * (1.0 + gram.trace());
      const Vector gamma = gram.llt().solve(rhs);
      for (int i = 0; i < m; ++i) out -= gamma[i] * (dx_.col(i) + dr_.col(i));
    }
    x_prev_ = x;
    r_prev_ = r;
    ++count_;
    return out;
  }

 private:
  Matrix dx_, dr_;
  Vector x_prev_, r_prev_;
  int count_ = 0;
};

}  // namespace lisyn::detail

#endif
