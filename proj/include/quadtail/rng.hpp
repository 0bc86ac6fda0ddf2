#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace quadtail {

/// Counter-based Philox4x32-10 generator (Salmon et al., SC'11).
///
/// A stream is identified by (seed, stream id): the 64-bit seed is the key and
/// the stream id occupies the upper half of the 128-bit counter, so distinct
/// ids give non-overlapping sequences of up to 2^64 blocks each. Satisfies
/// UniformRandomBitGenerator with 64-bit output.
class Philox4x32 {
 public:
  using result_type = std::uint64_t;
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  Philox4x32(std::uint64_t seed, std::uint64_t stream_id);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  /// Uniform double in (0, 1), 53-bit resolution; never returns 0 or 1.
  double uniform();

  /// Raw bijection, exposed for known-answer tests.
  static Block bijection(Block counter, Key key);

 private:
  void refill();

  Key key_;
  Block counter_;
  Block buffer_{};
  int next_ = 2;  // index into the two 64-bit halves of buffer_
};

/// Purpose tags keep independent random uses within one computation apart.
enum class StreamPurpose : std::uint16_t {
  kGeneric = 0,
  kCrude = 1,
  kTiltedZ = 2,
  kTiltedPool = 3,
  kTiltedResample = 4,
  kSphere = 5,
  kEdgeworth = 6,
  kGaussianMc = 7,
  kZx = 8,
};

/// Stream id for block `block` of a computation with the given purpose.
constexpr std::uint64_t stream_id(StreamPurpose purpose, std::uint64_t block) {
  return (static_cast<std::uint64_t>(purpose) << 48) | (block & ((std::uint64_t{1} << 48) - 1));
}

}  // namespace quadtail
