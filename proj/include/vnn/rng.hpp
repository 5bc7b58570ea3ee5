#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace vnn {

/// xoshiro256** seeded through splitmix64.
///
/// All randomness in the project (weight init, shuffling, synthetic data)
/// goes through this generator so that a seed fixes every stream on every
/// platform. Only integer arithmetic is used to produce raw draws; floating
/// point conversions use exact 53-bit scaling.
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed = 0);

  static Rng from_state(const State& state);

  std::uint64_t next_u64();

  /// Uniform in [0, 1).
  double uniform();

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);

  /// Uniform integer in [0, bound). bound must be > 0.
  std::size_t uniform_index(std::size_t bound);

  /// Standard normal draw (Box-Muller, no cached second value).
  double normal();

  const State& state() const { return state_; }

 private:
  struct RawTag {};
  explicit Rng(RawTag) {}
  State state_{};
};

/// Derives an independent seed for a named sub-stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace vnn
