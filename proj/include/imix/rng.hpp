#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace imix {

// Seeded generator. The raw stream is std::mt19937_64, whose output sequence
// is fixed by the C++ standard; every derived distribution below is written
// out here rather than taken from <random>, whose distributions are
// implementation-defined. Conversions:
//   uniform()  = top 53 bits of one draw * 2^-53, in [0, 1)
//   normal()   = Marsaglia polar method, the spare value is cached
//   gamma(a)   = Marsaglia-Tsang for a >= 1; gamma(a + 1) * U^(1/a) for a < 1
//   beta(a)    = g1 / (g1 + g2) with g1, g2 ~ gamma(a)
//
// Not safe for concurrent use; give each worker its own child().
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Unbiased integer in [0, n); n must be positive.
  std::size_t uniform_index(std::size_t n);
  double normal();
  double gamma(double shape);

  // Independent stream: seed ^ splitmix64(stream_id).
  Rng child(std::uint64_t stream_id) const;

  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

// lambda ~ Beta(alpha, alpha). ConfigError when alpha <= 0.
double beta_sample(Rng& rng, double alpha);

// Draw from Dirichlet(1, ..., 1) over k >= 2 components.
std::vector<double> dirichlet_sample(Rng& rng, std::size_t k);

}  // namespace imix
