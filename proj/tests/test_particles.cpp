#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "lisyn/errors.hpp"
#include "lisyn/io.hpp"
#include "lisyn/particles.hpp"
#include "lisyn/rng.hpp"
#include "lisyn/scenarios.hpp"

using namespace lisyn;

namespace {

ParticleSet points_1d(std::initializer_list<double> xs, std::initializer_list<double> ws) {
  PointMatrix pts(static_cast<Eigen::Index>(xs.size()), 1);
  Eigen::Index i = 0;
  for (double x : xs) pts(i++, 0) = x;
  Vector w(static_cast<Eigen::Index>(ws.size()));
  i = 0;
  for (double v : ws) w[i++] = v;
  return ParticleSet{pts, w};
}

}  // namespace

TEST_CASE("normalize scales onto the simplex") {
  Vector a(2);
  a << 2.0, 2.0;
  const Vector na = normalize(a);
  CHECK(na[0] == doctest::Approx(0.5));
  CHECK(na[1] == doctest::Approx(0.5));

  Vector b(3);
  b << 1.0, 0.0, 3.0;
  const Vector nb = normalize(b);
  CHECK(nb[0] == doctest::Approx(0.25));
  CHECK(nb[1] == 0.0);
  CHECK(nb[2] == doctest::Approx(0.75));
}

TEST_CASE("normalize rejects degenerate input") {
  Vector zero = Vector::Zero(2);
  CHECK_THROWS_AS(normalize(zero), AllZero);

  Vector bad(2);
  bad << 1.0, std::nan("");
  CHECK_THROWS_AS(normalize(bad), NonFinite);

  Vector neg(2);
  neg << 1.0, -0.5;
  CHECK_THROWS_AS(normalize(neg), NonFinite);
}

TEST_CASE("normalize is scale invariant") {
  RngStream rng(7);
  Vector raw(6);
  for (Eigen::Index i = 0; i < raw.size(); ++i) raw[i] = rng.uniform();
  const Vector n1 = normalize(raw);
  const Vector n2 = normalize(Vector(17.5 * raw));
  CHECK((n1 - n2).lpNorm<Eigen::Infinity>() < 1e-15);
}

TEST_CASE("ess on hand-checked weight vectors") {
  CHECK(ess(Vector::Constant(4, 0.25)) == doctest::Approx(4.0));

  Vector degenerate(3);
  degenerate << 1.0, 0.0, 0.0;
  CHECK(ess(degenerate) == doctest::Approx(1.0));

  Vector mixed(3);
  mixed << 0.5, 0.25, 0.25;
  CHECK(ess(mixed) == doctest::Approx(1.0 / 0.375));
}

TEST_CASE("ess is exact on uniform weights and permutation invariant") {
  const Eigen::Index n = 37;
  CHECK(ess(Vector::Constant(n, 1.0 / static_cast<double>(n))) ==
        doctest::Approx(static_cast<double>(n)).epsilon(1e-12));

  Vector w(4);
  w << 0.1, 0.2, 0.3, 0.4;
  Vector perm(4);
  perm << 0.4, 0.1, 0.3, 0.2;
  CHECK(ess(w) == doctest::Approx(ess(perm)).epsilon(1e-15));
}

TEST_CASE("systematic_resample clones a degenerate set") {
  ParticleSet ps = points_1d({2.5, -1.0, 4.0}, {0.0, 1.0, 0.0});
  RngStream rng(3);
  const ParticleSet out = systematic_resample(ps, rng);
  REQUIRE(out.size() == 3);
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    CHECK(out.points(i, 0) == -1.0);
    CHECK(out.weights[i] == doctest::Approx(1.0 / 3.0));
  }
}

TEST_CASE("systematic_resample is reproducible for a fixed seed") {
  RngStream rng(11);
  PointMatrix pts(8, 1);
  Vector w(8);
  for (Eigen::Index i = 0; i < 8; ++i) {
    pts(i, 0) = static_cast<double>(i);
    w[i] = rng.uniform() + 0.05;
  }
  const ParticleSet ps{pts, normalize(w)};

  RngStream r1(99), r2(99);
  const ParticleSet a = systematic_resample(ps, r1);
  const ParticleSet b = systematic_resample(ps, r2);
  CHECK(a.points == b.points);
  CHECK(a.weights == b.weights);
}

TEST_CASE("systematic_resample concentrates mass at the 0.9/0.1 split") {
  // 1000 atoms at two sites, the first site carrying total mass 0.9.  The
  // resampled copy count at that site lands inside a binomial-style band.
  const Eigen::Index n = 1000;
  PointMatrix pts(n, 1);
  Vector w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool first = i < n / 2;
    pts(i, 0) = first ? 1.0 : 2.0;
    w[i] = first ? 0.9 / 500.0 : 0.1 / 500.0;
  }
  const ParticleSet ps{pts, w};

  RngStream rng(123);
  const ParticleSet out = systematic_resample(ps, rng);
  int count = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (out.points(i, 0) == 1.0) ++count;
  CHECK(count >= 850);
  CHECK(count <= 950);
}

TEST_CASE("systematic_resample preserves the weighted mean in expectation") {
  RngStream setup(21);
  PointMatrix pts(50, 1);
  Vector w(50);
  for (Eigen::Index i = 0; i < 50; ++i) {
    pts(i, 0) = setup.normal();
    w[i] = setup.uniform() + 0.01;
  }
  const ParticleSet ps{pts, normalize(w)};
  const double target_mean = ps.points.col(0).dot(ps.weights);

  const int reps = 200;
  double acc = 0.0, acc2 = 0.0;
  RngStream master(77);
  for (int r = 0; r < reps; ++r) {
    RngStream rng = master.split(static_cast<std::uint64_t>(r));
    const ParticleSet out = systematic_resample(ps, rng);
    const double m = out.points.col(0).mean();
    acc += m;
    acc2 += m * m;
  }
  const double avg = acc / reps;
  const double var = std::max(acc2 / reps - avg * avg, 1e-30);
  const double se = std::sqrt(var / reps);
  CHECK(std::abs(avg - target_mean) <= 3.0 * se + 1e-12);
}

TEST_CASE("weighted moments on tiny sets") {
  {
    const ParticleSet ps = points_1d({3.0}, {1.0});
    const Moments m = weighted_mean_and_second_moment(ps);
    CHECK(m.mean[0] == doctest::Approx(3.0));
    CHECK(m.second_moment(0, 0) == doctest::Approx(9.0));
  }
  {
    const ParticleSet ps = points_1d({-1.0, 1.0}, {0.5, 0.5});
    const Moments m = weighted_mean_and_second_moment(ps);
    CHECK(m.mean[0] == doctest::Approx(0.0));
    CHECK(m.second_moment(0, 0) == doctest::Approx(1.0));
    CHECK(m.covariance()(0, 0) == doctest::Approx(1.0));
  }
}

TEST_CASE("scenario A prior sample matches its population moments") {
  const ScenarioData data = scenario_a(kDefaultScenarioSeed);
  const Moments m = weighted_mean_and_second_moment(data.prior);
  // N(-5, 9) sampled with N = 2000: allow a few standard errors.
  CHECK(std::abs(m.mean[0] + 5.0) < 0.3);
  CHECK(std::abs(m.covariance()(0, 0) - 9.0) < 0.9);
}

TEST_CASE("validate rejects malformed sets") {
  ParticleSet empty;
  empty.points.resize(0, 1);
  empty.weights.resize(0);
  CHECK_THROWS_AS(validate(empty), DimensionMismatch);

  ParticleSet bad = points_1d({0.0, 1.0}, {0.6, 0.6});
  CHECK_THROWS_AS(validate(bad), Error);

  ParticleSet mismatch = points_1d({0.0, 1.0}, {0.5, 0.5});
  mismatch.weights.resize(3);
  mismatch.weights << 0.5, 0.25, 0.25;
  CHECK_THROWS_AS(validate(mismatch), DimensionMismatch);
}

TEST_CASE("weighted_quantile interpolates the piecewise-linear inverse cdf") {
  Vector values(3);
  values << 1.0, 2.0, 3.0;
  const Vector w = Vector::Constant(3, 1.0 / 3.0);
  CHECK(weighted_quantile(values, w, 0.5) == doctest::Approx(2.0));
  CHECK(weighted_quantile(values, w, 0.0) == doctest::Approx(1.0));
  CHECK(weighted_quantile(values, w, 1.0) == doctest::Approx(3.0));
  // Midpoint positions are {1/6, 1/2, 5/6}; q = 0.25 interpolates a quarter
  // of the way from the first midpoint to the second.
  CHECK(weighted_quantile(values, w, 0.25) == doctest::Approx(1.25));

  // Order of the input does not matter.
  Vector shuffled(3);
  shuffled << 3.0, 1.0, 2.0;
  Vector ws(3);
  ws << 1.0, 1.0, 1.0;
  CHECK(weighted_quantile(shuffled, ws, 0.5) == doctest::Approx(2.0));
}

TEST_CASE("particle sets round-trip through csv and json") {
  RngStream rng(5);
  PointMatrix pts(6, 2);
  Vector w(6);
  for (Eigen::Index i = 0; i < 6; ++i) {
    pts(i, 0) = rng.normal();
    pts(i, 1) = rng.normal() * 1e-7;
    w[i] = rng.uniform() + 0.02;
  }
  const ParticleSet ps{pts, normalize(w)};

  const auto dir = std::filesystem::temp_directory_path();
  const std::string csv = (dir / "lisyn_rt.csv").string();
  const std::string js = (dir / "lisyn_rt.json").string();

  write_particles_csv(ps, csv);
  const ParticleSet from_csv = read_particles(csv);
  CHECK(from_csv.points == ps.points);
  CHECK(from_csv.weights == ps.weights);

  write_particles_json(ps, js);
  const ParticleSet from_json = read_particles(js);
  CHECK(from_json.points == ps.points);
  CHECK(from_json.weights == ps.weights);

  std::remove(csv.c_str());
  std::remove(js.c_str());
}
