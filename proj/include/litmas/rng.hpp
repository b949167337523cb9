#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace litmas {

/// Independent, reproducible stream for one (seed, purpose, index) triple.
/// Every random draw in the library goes through one of these so that
/// components never share generator state.
inline std::mt19937_64 derive_rng(std::uint64_t seed, std::string_view purpose,
                                  std::uint64_t index = 0) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char ch : purpose) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace litmas
