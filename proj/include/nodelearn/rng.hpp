#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace nodelearn {

// Named random streams. Every draw in a run comes from a stream keyed by
// (master seed, subsystem, node, ...), so adding a node or a subsystem never
// shifts the numbers any other stream produces.
enum class Stream : std::uint64_t {
  init = 1,
  data = 2,
  replay = 3,
  mobility = 4,
  link = 5,
  validation = 6,
  test = 7,
  probe = 8,
  partition = 9,
  adversary = 10,
  relay = 11,
  offload = 12,
  user = 99,
};

namespace detail {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t fmix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t combine(std::uint64_t h, std::uint64_t v) noexcept {
  return fmix64(h ^ fmix64(v + kGolden + (h << 6) + (h >> 2)));
}

}  // namespace detail

// Counter-based generator: output n is a pure function of (key, n). The
// whole state is two integers, which makes checkpointing trivial.
class Rng {
 public:
  Rng() = default;

  explicit Rng(std::uint64_t seed, Stream stream = Stream::user, std::uint64_t a = 0,
               std::uint64_t b = 0, std::uint64_t c = 0) noexcept {
    std::uint64_t h = detail::fmix64(seed + detail::kGolden);
    h = detail::combine(h, static_cast<std::uint64_t>(stream));
    h = detail::combine(h, a);
    h = detail::combine(h, b);
    key_ = detail::combine(h, c);
  }

  static Rng from_state(std::uint64_t key, std::uint64_t counter) noexcept {
    Rng r;
    r.key_ = key;
    r.counter_ = counter;
    return r;
  }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept {
    std::uint64_t x = detail::fmix64(key_ + (++counter_) * detail::kGolden);
    return detail::fmix64(x ^ ((key_ << 17) | (key_ >> 47)));
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  // Box-Muller; one variate per call, no cached spare so the state stays (key, counter).
  double normal() noexcept {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // log of a Gamma(shape, 1) variate. Working in log space keeps tiny
  // Dirichlet concentrations (shape << 1) from underflowing to zero.
  double log_gamma_variate(double shape) noexcept {
    if (shape < 1.0) {
      double u = 1.0 - uniform();
      return log_gamma_variate(shape + 1.0) + std::log(u) / shape;
    }
    // Marsaglia & Tsang.
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = 1.0 - uniform();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return std::log(d * v);
    }
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace nodelearn
