#include "orthoml/rng.hpp"

namespace orthoml {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t s = splitmix64(seed);
  std::uint64_t k = 1;
  for (auto id : path) {
    s = splitmix64(s ^ splitmix64(id + k * 0x9e3779b97f4a7c15ULL));
    ++k;
  }
  return s;
}

}  // namespace orthoml
