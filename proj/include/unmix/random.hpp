#ifndef UNMIX_RANDOM_HPP
#define UNMIX_RANDOM_HPP

#include <cstdint>
#include <random>

namespace unmix {

namespace detail {

// SplitMix64 finalizer; used to derive independent substream seeds so that
// composite generators stay reproducible when components are reordered.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream));
}

inline std::mt19937_64 make_engine(std::uint64_t seed) {
  return std::mt19937_64(seed);
}

// Uniform draw in (0, 1]; safe as a -log argument.
inline double uniform_open01(std::mt19937_64& rng) {
  return 1.0 - std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace detail

}  // namespace unmix

#endif  // UNMIX_RANDOM_HPP
