#pragma once

#include <cstdint>
#include <vector>

namespace attnforge {

// Self-contained deterministic generator (splitmix64 core, Box-Muller for
// normals). We deliberately avoid <random> distributions: their output is
// implementation-defined, and reports hash trained weights, so runs must
// reproduce bit-for-bit regardless of the standard library in use.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  // uniform in [0, 1), 53-bit resolution
  double uniform();

  // standard normal; burns two uniforms per call, no cached spare, so the
  // draw sequence does not depend on call-site interleaving
  double normal();

  // normal(0, stddev) redrawn until within +-2 stddev
  double truncated_normal(double stddev);

  // uniform integer in [0, n), n > 0
  std::size_t uniform_index(std::size_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace attnforge
