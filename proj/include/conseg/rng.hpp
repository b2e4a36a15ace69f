#pragma once

#include <cstdint>
#include <cstddef>
#include <cmath>
#include <utility>
#include <vector>

namespace conseg {

// Deterministic generator used everywhere reproducibility matters.
// Bounded and real-valued draws are implemented by hand because the
// std::* distributions (and std::shuffle) are implementation-defined,
// which would break byte-identical reruns across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // splitmix64
  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Unbiased index in [0, n). n must be > 0.
  std::size_t index(std::size_t n) {
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return static_cast<std::size_t>(x % bound);
  }

  double real() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * real(); }

  double normal(double mean, double stddev) {
    if (have_spare_) {
      have_spare_ = false;
      return mean + stddev * spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * real() - 1.0;
      v = 2.0 * real() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    have_spare_ = true;
    return mean + stddev * u * f;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

 private:
  std::uint64_t state_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Stable sub-seed derivation: independent streams for model init, batch
// sampling, replay shuffles etc. never share state.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> words) {
  Rng mix(base ^ 0xa0761d6478bd642full);
  std::uint64_t out = mix.next_u64();
  for (std::uint64_t w : words) {
    Rng step(out ^ (w + 0xe7037ed1a0b428dbull));
    out = step.next_u64();
  }
  return out;
}

}  // namespace conseg
