#include "quadtail/rng.hpp"

namespace quadtail {
namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53;
constexpr std::uint32_t kMul1 = 0xCD9E8D57;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& lo, std::uint32_t& hi) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  lo = static_cast<std::uint32_t>(p);
  hi = static_cast<std::uint32_t>(p >> 32);
}

}  // namespace

Philox4x32::Philox4x32(std::uint64_t seed, std::uint64_t stream_id)
    : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
      counter_{0, 0, static_cast<std::uint32_t>(stream_id),
               static_cast<std::uint32_t>(stream_id >> 32)} {}

Philox4x32::Block Philox4x32::bijection(Block ctr, Key key) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t lo0, hi0, lo1, hi1;
    mulhilo(kMul0, ctr[0], lo0, hi0);
    mulhilo(kMul1, ctr[2], lo1, hi1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

void Philox4x32::refill() {
  buffer_ = bijection(counter_, key_);
  // 64-bit increment of the low counter words; the stream id words stay fixed.
  if (++counter_[0] == 0) ++counter_[1];
  next_ = 0;
}

Philox4x32::result_type Philox4x32::operator()() {
  if (next_ == 2) refill();
  const int i = 2 * next_++;
  return (static_cast<std::uint64_t>(buffer_[i + 1]) << 32) | buffer_[i];
}

double Philox4x32::uniform() {
  return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace quadtail
