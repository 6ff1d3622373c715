#include "attnforge/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace attnforge {

std::uint64_t Rng::next_u64() {
  // splitmix64 (Steele, Lea, Flood 2014); tiny state, passes BigCrush
  state_ += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  // Box-Muller, cosine branch only
  double u1 = uniform();
  double u2 = uniform();
  while (u1 <= 0.0) u1 = uniform();  // guard log(0)
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double Rng::truncated_normal(double stddev) {
  if (!(stddev > 0.0)) throw std::invalid_argument("truncated_normal: stddev must be positive");
  for (;;) {
    double x = normal() * stddev;
    if (std::fabs(x) <= 2.0 * stddev) return x;
  }
}

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
  // rejection sampling to kill modulo bias
  std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  for (;;) {
    std::uint64_t x = next_u64();
    if (x < limit) return static_cast<std::size_t>(x % n);
  }
}

}  // namespace attnforge
