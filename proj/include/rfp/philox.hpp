#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace rfp {

/// Philox4x32-10 counter-based block cipher used as RNG.
///
/// A (key, counter) pair is mapped to four independent 32-bit words, so a
/// stream is addressed as (seed, stream_id, block_index) with no sequential
/// state. That makes per-path streams reproducible under any degree of
/// parallelism and lets backward passes regenerate increments on demand.
namespace philox {

inline constexpr std::uint32_t kMul0 = 0xD2511F53u;
inline constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
inline constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline std::array<std::uint32_t, 4> round10(std::array<std::uint32_t, 4> c,
                                            std::array<std::uint32_t, 2> k) {
  for (int r = 0; r < 10; ++r) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
    const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
    const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
    c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    k[0] += kWeyl0;
    k[1] += kWeyl1;
  }
  return c;
}

/// One 128-bit block for (seed, stream, block) addressing.
inline std::array<std::uint32_t, 4> block(std::uint64_t seed, std::uint64_t stream,
                                          std::uint64_t block_index) {
  const std::array<std::uint32_t, 4> ctr = {
      static_cast<std::uint32_t>(block_index), static_cast<std::uint32_t>(block_index >> 32),
      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  const std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed),
                                            static_cast<std::uint32_t>(seed >> 32)};
  return round10(ctr, key);
}

/// Strict (0,1) double from two 32-bit lanes: 52 random bits centered in the
/// cell. (k + 0.5) 2^-52 is exactly representable for every k < 2^52, so
/// neither endpoint is ever produced and no rounding occurs.
inline double to_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32) | lo;
  return (static_cast<double>(bits >> 12) + 0.5) * 0x1.0p-52;
}

/// Uniform(0,1) by flat index; two variates per block.
inline double uniform_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  const auto w = block(seed, stream, index >> 1);
  return (index & 1) ? to_unit(w[2], w[3]) : to_unit(w[0], w[1]);
}

/// Standard normal by flat index; Box-Muller pair per block.
inline double normal_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  const auto w = block(seed, stream, index >> 1);
  const double u1 = to_unit(w[0], w[1]);
  const double u2 = to_unit(w[2], w[3]);
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  return (index & 1) ? radius * std::sin(angle) : radius * std::cos(angle);
}

}  // namespace philox

/// Buffered sequential view of one Philox stream; equals
/// philox::normal_at(seed, stream, 0), 1, 2, ... but computes each block once.
class NormalStream {
 public:
  NormalStream(std::uint64_t seed, std::uint64_t stream, std::uint64_t start_index = 0)
      : seed_(seed), stream_(stream), index_(start_index) {}

  double next() {
    if ((index_ & 1) == 0) {
      const auto w = philox::block(seed_, stream_, index_ >> 1);
      const double u1 = philox::to_unit(w[0], w[1]);
      const double u2 = philox::to_unit(w[2], w[3]);
      const double radius = std::sqrt(-2.0 * std::log(u1));
      const double angle = 2.0 * std::numbers::pi * u2;
      cached_ = radius * std::sin(angle);
      have_cache_ = true;
      ++index_;
      return radius * std::cos(angle);
    }
    const std::uint64_t i = index_++;
    if (have_cache_) {
      have_cache_ = false;
      return cached_;
    }
    return philox::normal_at(seed_, stream_, i);  // odd start: no cached partner
  }

 private:
  std::uint64_t seed_, stream_, index_;
  double cached_ = 0.0;
  bool have_cache_ = false;
};

}  // namespace rfp
