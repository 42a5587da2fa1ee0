#pragma once

#include <cstdint>
#include <string_view>

namespace afp {

/// SplitMix64 finalizer; used to derive seeds and stream selectors.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// FNV-1a, for turning a purpose label into a stream id.
constexpr std::uint64_t hash_label(std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// PCG32 (XSH-RR, 64-bit state). Independent streams are selected by the
/// increment; `derive` gives a child generator for a (label, index) pair
/// without consuming from the parent.
class Pcg32 {
 public:
  Pcg32() : Pcg32(0, 0) {}
  Pcg32(std::uint64_t seed, std::uint64_t stream) { reseed(seed, stream); }

  void reseed(std::uint64_t seed, std::uint64_t stream) {
    seed_ = seed;
    stream_ = stream;
    state_ = 0;
    inc_ = (stream << 1u) | 1u;
    next_u32();
    state_ += seed;
    next_u32();
  }

  std::uint32_t next_u32() {
    std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    auto rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
  }

  std::uint64_t next_u64() {
    std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Unbiased integer in [0, n). n must be > 0.
  std::uint32_t below(std::uint32_t n) {
    std::uint32_t threshold = (-n) % n;
    for (;;) {
      std::uint32_t r = next_u32();
      if (r >= threshold) return r % n;
    }
  }

  /// Standard normal via Box-Muller (one value per call, no caching so the
  /// sequence depends only on the number of calls).
  double normal();

  Pcg32 derive(std::string_view label, std::uint64_t index = 0) const {
    std::uint64_t s = splitmix64(seed_ ^ splitmix64(hash_label(label) + index));
    std::uint64_t st = splitmix64(stream_ + hash_label(label) * 31 + index);
    return Pcg32(s, st);
  }

  bool operator==(const Pcg32&) const = default;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 1;
};

/// Root generator for a run: one independent stream per purpose.
inline Pcg32 make_stream(std::uint64_t seed, std::string_view purpose) {
  return Pcg32(splitmix64(seed), hash_label(purpose));
}

}  // namespace afp
