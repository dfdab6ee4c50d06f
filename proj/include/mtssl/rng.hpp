#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace mtssl {

// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Labels for derived streams so that e.g. weak and strong augmentation of the
// same sample never share random numbers.
enum class Stream : std::uint64_t {
  kWeak = 1,
  kStrong = 2,
  kLabeledOrder = 3,
  kUnlabeledOrder = 4,
  kImplicitOrder = 5,
  kInit = 6,
  kScenario = 7,
  kShapes = 8,
};

// Counter-based derivation: the seed of a stream is a pure function of the run
// seed and a list of coordinates (step, slot, epoch, ...). Training therefore
// needs no mutable rng state and resumes bit-exactly from a step counter.
inline std::uint64_t derive_seed(std::uint64_t seed, Stream stream,
                                 std::initializer_list<std::uint64_t> coords = {}) {
  std::uint64_t h = mix64(seed ^ mix64(static_cast<std::uint64_t>(stream)));
  for (auto c : coords) h = mix64(h ^ mix64(c + 0x632BE59BD9B4E019ull));
  return h;
}

// Thin wrapper over mt19937_64 with distribution helpers whose output does not
// depend on the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}
  Rng(std::uint64_t seed, Stream stream, std::initializer_list<std::uint64_t> coords = {})
      : engine_(derive_seed(seed, stream, coords)) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = ~0ull - (~0ull % n);
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  // Uniform integer in [lo, hi].
  int between(int lo, int hi) {
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    // Box-Muller; u1 in (0, 1].
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace mtssl
