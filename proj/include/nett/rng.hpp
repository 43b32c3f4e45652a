#pragma once
/*
 * SeededRng: xoshiro256** (Blackman & Vigna 2018) with state initialised
 * from a 64-bit seed by four successive splitmix64 outputs.
 *
 *   splitmix64:  z = (s += 0x9e3779b97f4a7c15);
 *                z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9;
 *                z = (z ^ (z >> 27)) * 0x94d049bb133111eb;
 *                return z ^ (z >> 31);
 *
 *   xoshiro256**: result = rotl(s1 * 5, 7) * 9;
 *                 t = s1 << 17;
 *                 s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3;
 *                 s2 ^= t; s3 = rotl(s3, 45);
 *
 * uniform() uses the top 53 bits. normal() is Box-Muller built on uniform(),
 * so streams are identical on every platform (std:: distributions are not).
 */

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace nett {

inline std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class SeededRng {
 public:
  using result_type = std::uint64_t;

  explicit SeededRng(std::uint64_t seed = 0) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& s : state_) s = splitmix64(sm);
  }

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t result = std::rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = std::rotl(state_[3], 45);
    return result;
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() noexcept { return next_u64(); }

  /// Uniform in [0,1).
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] (inclusive); modulo bias is negligible for small ranges.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(th);
    has_spare_ = true;
    return r * std::cos(th);
  }

  /// Independent child stream for item `index`; depends only on (seed, index).
  SeededRng split(std::uint64_t index) const noexcept {
    std::uint64_t sm = seed_ ^ (0xd1b54a32d192ed03ULL * (index + 1));
    return SeededRng(splitmix64(sm));
  }

  /// Fisher-Yates with this generator (std::shuffle is implementation-defined).
  template <class T>
  void shuffle(std::vector<T>& v) noexcept {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(next_u64() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace nett
