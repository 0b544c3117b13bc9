#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace covtune {

namespace detail {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) noexcept {
  return splitmix64(h ^ splitmix64(v + 0x632be59bd9b4e019ULL));
}

}  // namespace detail

/// FNV-1a, used for stable stream labels and dataset digests.
inline constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/**
 * Deterministic random stream identified by (seed, stream id).
 *
 * Streams are values: callers that need independent randomness derive a child
 * stream (`child(r, b, s)`) instead of sharing one engine across threads.
 */
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed), stream_(stream_id), engine_(detail::hash_combine(detail::splitmix64(seed), stream_id)) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_; }

  RngStream child(std::initializer_list<std::uint64_t> ids) const {
    std::uint64_t h = stream_;
    for (auto id : ids) h = detail::hash_combine(h, id);
    return RngStream(seed_, h);
  }

  RngStream child(std::uint64_t a) const { return child({a}); }
  RngStream child(std::uint64_t a, std::uint64_t b) const { return child({a, b}); }
  RngStream child(std::uint64_t a, std::uint64_t b, std::uint64_t c) const { return child({a, b, c}); }

  double normal() { return normal_(engine_); }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  // Uniform integer in [0, bound).
  std::size_t index(std::size_t bound) { return std::uniform_int_distribution<std::size_t>(0, bound - 1)(engine_); }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace covtune
