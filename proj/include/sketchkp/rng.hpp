#pragma once

#include <cstdint>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

namespace sketchkp {

// Deterministic RNG with hand-rolled distributions. std::mt19937 plus the
// standard distributions are implementation-defined, which would break the
// byte-identical log/report contract across toolchains; this keeps every
// sampled value a pure function of the seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix(seed + 0x9e3779b97f4a7c15ULL)) {}

  std::uint64_t next_u64() {
    state_ = splitmix(state_);
    return state_;
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  std::uint64_t next_below(std::uint64_t n) {
    // rejection sampling keeps it exactly uniform
    const std::uint64_t limit = n * ((~0ULL) / n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  int randint(int n) { return static_cast<int>(next_below(static_cast<std::uint64_t>(n))); }

  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  // stable seed derivation for sub-streams (episode i of run seed s, ...)
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    return splitmix(splitmix(seed) ^ (stream + 0x632be59bd9b4e019ULL));
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace sketchkp
