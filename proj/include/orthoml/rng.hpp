// rng.hpp
// Seedable, splittable random stream used by every stochastic routine.
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace orthoml {

/// SplitMix64 finalizer. Used to derive child seeds; never used as a stream.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Derive a seed from a parent seed and a path of stream ids. The rule is
/// seed' = splitmix64(seed ^ splitmix64(id + k * golden)) folded over the path,
/// so (seed, {a, b}) and (seed, {b, a}) give different streams.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept;

class Rng {
 public:
  using engine_type = std::mt19937_64;

  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

  std::uint64_t seed() const noexcept { return seed_; }

  /// Independent child stream; does not advance this stream.
  Rng split(std::uint64_t stream_id) const { return Rng(derive_seed(seed_, {stream_id})); }

  engine_type& engine() noexcept { return engine_; }

  double normal() { return normal_(engine_); }
  double uniform01() { return std::generate_canonical<double, 53>(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

 private:
  std::uint64_t seed_;
  engine_type engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace orthoml
