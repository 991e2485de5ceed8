#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

namespace nupf {

namespace detail {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Philox4x32-10 block function (Salmon et al., "Parallel random numbers:
/// as easy as 1, 2, 3"). Pure: output depends only on (counter, key).
inline std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                                  std::array<std::uint32_t, 2> key) noexcept {
  constexpr std::uint32_t kM0 = 0xD2511F53u;
  constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u;
  constexpr std::uint32_t kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

}  // namespace detail

/// Counter-based, splittable random stream.
///
/// A stream is identified by a 64-bit Philox key and a 64-bit stream word
/// (the high half of the 128-bit counter); the low half counts blocks drawn.
/// `split(id)` derives a child stream by hashing the id into both words, so a
/// (seed, id-path, draw-order) triple always reproduces the same bits and
/// sibling streams never share counter space in practice.
///
/// Satisfies UniformRandomBitGenerator, so it can drive <random> distributions.
class RngStream {
 public:
  using result_type = std::uint64_t;

  explicit RngStream(std::uint64_t seed = 0) noexcept
      : seed_(seed),
        key_(detail::splitmix64(seed ^ 0x6A09E667F3BCC908ULL)),
        stream_(detail::splitmix64(seed ^ 0xBB67AE8584CAA73BULL)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  [[nodiscard]] RngStream split(std::uint64_t id) const noexcept {
    RngStream child(*this);
    child.key_ = detail::splitmix64(key_ ^ detail::splitmix64(id + 0x3C6EF372FE94F82BULL));
    child.stream_ = detail::splitmix64(stream_ + detail::splitmix64(id ^ 0xA54FF53A5F1D36F1ULL));
    child.path_hash_ = detail::splitmix64(path_hash_ ^ (id + 1));
    child.block_ = 0;
    child.buffered_ = 0;
    child.normal_.reset();
    return child;
  }

  template <typename... Ids>
  [[nodiscard]] RngStream split(std::uint64_t first, std::uint64_t second, Ids... rest) const noexcept {
    return split(first).split(second, static_cast<std::uint64_t>(rest)...);
  }

  result_type operator()() noexcept {
    if (buffered_ == 0) refill();
    --buffered_;
    const std::size_t at = 2 * buffered_;
    return (static_cast<std::uint64_t>(buffer_[at]) << 32) | buffer_[at + 1];
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1); safe to take logarithms of.
  double uniform_open() noexcept {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() { return normal_(*this); }
  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Uniform integer on {0, ..., n-1}.
  std::size_t below(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(*this);
  }

  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
  /// Fingerprint of the split path from the root seed; 0 for a root stream.
  [[nodiscard]] std::uint64_t stream_id() const noexcept { return path_hash_; }

 private:
  void refill() noexcept {
    const std::array<std::uint32_t, 4> ctr{static_cast<std::uint32_t>(block_),
                                           static_cast<std::uint32_t>(block_ >> 32),
                                           static_cast<std::uint32_t>(stream_),
                                           static_cast<std::uint32_t>(stream_ >> 32)};
    const std::array<std::uint32_t, 2> key{static_cast<std::uint32_t>(key_),
                                           static_cast<std::uint32_t>(key_ >> 32)};
    buffer_ = detail::philox4x32_10(ctr, key);
    ++block_;
    buffered_ = 2;
  }

  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t stream_;
  std::uint64_t path_hash_ = 0;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  std::size_t buffered_ = 0;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Seed for run `run_index` of an experiment with master seed `master`.
inline std::uint64_t run_seed(std::uint64_t master, std::uint64_t run_index) noexcept {
  return detail::splitmix64(detail::splitmix64(master) ^ (run_index * 0xD1B54A32D192ED03ULL + 1));
}

}  // namespace nupf
