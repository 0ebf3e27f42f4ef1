#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace trifuse {

// Bad configuration values / malformed switch combinations. CLI exits 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad data: missing files, shape mismatches, illegal label values. CLI exits 3.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

using rng_t = std::mt19937_64;

// Stable 64-bit hash for case ids and seed derivation (std::hash is not
// pinned across standard libraries).
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline rng_t make_rng(std::uint64_t seed, const std::string& salt) {
  return rng_t(mix_seed(seed, fnv1a64(salt)));
}

}  // namespace trifuse
