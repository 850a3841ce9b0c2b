#ifndef LISYN_RNG_HPP
#define LISYN_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

namespace lisyn {

// Deterministic random stream with cheap derivation of independent
// substreams.  The raw generator is std::mt19937_64, whose output sequence
// is fixed by the standard; all variate transforms live here so that results
// are identical across standard libraries and platforms.
//
// split() derives a child stream from the parent's identity seed only, never
// from its consumption state, so the substream assigned to (step, purpose)
// does not depend on how many draws other consumers made.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), gen_(mix(seed)) {}

  RngStream split(std::uint64_t a, std::uint64_t b = 0) const {
    std::uint64_t s = seed_;
    s = mix(s ^ (0x9e3779b97f4a7c15ULL + a));
    s = mix(s ^ (0xbf58476d1ce4e5b9ULL + b));
    return RngStream(s);
  }

  std::uint64_t next_u64() { return gen_(); }

  // U[0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // N(0, 1) via Box-Muller; u1 is drawn in (0, 1] so the log is finite.
  double normal() {
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  // Uniform over {0, ..., n-1}, unbiased via rejection.
  std::uint64_t uniform_int(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do { x = next_u64(); } while (x >= limit);
    return x % n;
  }

  std::uint64_t seed() const { return seed_; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    // splitmix64 finalizer; decorrelates consecutive seeds.
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace lisyn

#endif
