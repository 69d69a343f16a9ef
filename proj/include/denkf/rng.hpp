#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace denkf {

/// splitmix64 finalizer: a cheap, well-mixed 64-bit permutation.  Used to
/// derive independent sub-stream seeds from (run seed, step, member, salt)
/// tuples so that per-member noise is reproducible and independent of
/// evaluation order.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Folds a sequence of 64-bit words into one well-mixed seed.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6a09e667f3bcc908ULL;  // arbitrary non-zero start
  for (std::uint64_t p : parts) h = mix64(h ^ p);
  return h;
}

inline std::mt19937_64 make_engine(std::uint64_t seed) {
  return std::mt19937_64(seed);
}

/// Salts keep the per-purpose random streams disjoint even when the other
/// tuple components coincide.
namespace salt {
inline constexpr std::uint64_t kTransition = 0x7261'6e73'6974'696fULL;
inline constexpr std::uint64_t kSensor = 0x73656e'736f72'00ULL;
inline constexpr std::uint64_t kInit = 0x696e'6974'00ULL;
inline constexpr std::uint64_t kSimLatent = 0x73696d'6c6174ULL;
inline constexpr std::uint64_t kSimNoise = 0x73696d'6e6f69ULL;
inline constexpr std::uint64_t kSimPlacement = 0x73696d'706c61ULL;
inline constexpr std::uint64_t kWeights = 0x776569'676874ULL;
inline constexpr std::uint64_t kMask = 0x6d61'736bULL;
inline constexpr std::uint64_t kTrain = 0x747261'696eULL;
inline constexpr std::uint64_t kOracle = 0x6f7261'636cULL;
}  // namespace salt

}  // namespace denkf
