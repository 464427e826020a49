#pragma once

#include <cstdint>
#include <string_view>

namespace easyphoto {

/// One round of the splitmix64 finalizer applied to x + golden gamma.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  std::uint64_t z = x + 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Top 53 bits scaled into [0, 2).
constexpr double unit2_from_bits(std::uint64_t h) noexcept {
  return static_cast<double>(h >> 11) / 4503599627370496.0;  // 2^52
}

/// Sequential splitmix64 stream; satisfies UniformRandomBitGenerator.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }

  constexpr result_type operator()() noexcept {
    const std::uint64_t out = splitmix64(state_);
    state_ += 0x9E3779B97F4A7C15ULL;
    return out;
  }

  /// Uniform double in [-1, 1).
  constexpr double symmetric() noexcept { return unit2_from_bits((*this)()) - 1.0; }

 private:
  std::uint64_t state_;
};

constexpr std::uint64_t fnv1a64(std::string_view text) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const char ch : text) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace easyphoto
