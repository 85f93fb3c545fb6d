#pragma once

// Counter-based random streams. Every (master seed, trajectory, mode) triple
// owns an independent Philox4x32-10 stream, so results do not depend on how
// trajectories are scheduled across threads.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace spdelab {

using Philox4x32Counter = std::array<std::uint32_t, 4>;
using Philox4x32Key = std::array<std::uint32_t, 2>;

// Philox4x32 with 10 rounds (Salmon et al., SC'11).
inline Philox4x32Counter philox4x32_10(Philox4x32Counter ctr, Philox4x32Key key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kW0;
      key[1] += kW1;
    }
    const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Named stream domains keep unrelated consumers of one seed apart.
enum class StreamDomain : std::uint32_t { SpdeNoise = 0, ScalarOracle = 1, Synthetic = 2 };

// Sequential standard normals from one counter-based stream. Draw i is a pure
// function of (seed, trajectory, channel, domain, i).
class NormalStream {
 public:
  NormalStream() = default;
  NormalStream(std::uint64_t seed, std::uint64_t trajectory, std::int64_t channel,
               StreamDomain domain = StreamDomain::SpdeNoise) {
    const std::uint64_t k = splitmix64(seed ^ splitmix64(trajectory + 0x632BE59BD9B4E019ull));
    key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
    channel_ = static_cast<std::uint32_t>(channel + 0x80000000ll);
    domain_ = static_cast<std::uint32_t>(domain);
  }

  double next() {
    if ((index_ & 1u) == 0) refill(index_ >> 1);
    const double z = cache_[index_ & 1u];
    ++index_;
    return z;
  }

  std::uint64_t position() const { return index_; }

 private:
  static double to_open_unit(std::uint64_t bits) {
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
  }

  void refill(std::uint64_t pair) {
    const Philox4x32Counter ctr{static_cast<std::uint32_t>(pair),
                                static_cast<std::uint32_t>(pair >> 32), channel_, domain_};
    const auto r = philox4x32_10(ctr, key_);
    const double u1 = to_open_unit((std::uint64_t{r[0]} << 32) | r[1]);
    const double u2 = to_open_unit((std::uint64_t{r[2]} << 32) | r[3]);
    const double rad = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * std::numbers::pi * u2;
    cache_ = {rad * std::cos(ang), rad * std::sin(ang)};
  }

  Philox4x32Key key_{};
  std::uint32_t channel_ = 0;
  std::uint32_t domain_ = 0;
  std::uint64_t index_ = 0;
  std::array<double, 2> cache_{};
};

}  // namespace spdelab
