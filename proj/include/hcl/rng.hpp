#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace hcl {

// splitmix64 step; also used as the mixing function for seed derivation.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  return splitmix64(s);
}

// Counter-free deterministic generator. All randomness in the project flows
// through this class so that runs are reproducible independent of the
// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // decorrelate trivially related seeds
    (void)splitmix64(state_);
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  // uniform in [0, 1) with 53 random bits
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

  // inclusive integer range, unbiased (Lemire rejection)
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (lo > hi) throw std::invalid_argument("Rng::uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(next_u64());  // full 64-bit range
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * span;
    auto l = static_cast<std::uint64_t>(m);
    if (l < span) {
      const std::uint64_t t = (0 - span) % span;
      while (l < t) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * span;
        l = static_cast<std::uint64_t>(m);
      }
    }
    return lo + static_cast<std::int64_t>(m >> 64);
  }

  bool bernoulli(double p = 0.5) { return uniform() < p; }

  // standard normal, Box-Muller with cached second value
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  std::vector<std::uint8_t> serialize() const {
    std::vector<std::uint8_t> out(sizeof(std::uint64_t) + 1 + sizeof(double));
    std::memcpy(out.data(), &state_, sizeof state_);
    out[sizeof state_] = has_spare_ ? 1 : 0;
    std::memcpy(out.data() + sizeof state_ + 1, &spare_, sizeof spare_);
    return out;
  }

  static Rng deserialize(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() != sizeof(std::uint64_t) + 1 + sizeof(double))
      throw std::invalid_argument("Rng::deserialize: bad state length");
    Rng r(0);
    std::memcpy(&r.state_, bytes.data(), sizeof r.state_);
    r.has_spare_ = bytes[sizeof r.state_] != 0;
    std::memcpy(&r.spare_, bytes.data() + sizeof r.state_ + 1, sizeof r.spare_);
    return r;
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Stable stream tags for derived generators. Augmentation draws are keyed by
// (seed, stage, epoch, record id, view) so results do not depend on the order
// in which samples happen to be processed.
namespace stream {
inline constexpr std::uint64_t kInit = 0x01;
inline constexpr std::uint64_t kShuffle = 0x02;
inline constexpr std::uint64_t kAugView1 = 0x03;
inline constexpr std::uint64_t kAugView2 = 0x04;
inline constexpr std::uint64_t kWarmup = 0x05;
inline constexpr std::uint64_t kSynth = 0x06;
inline constexpr std::uint64_t kEval = 0x07;
}  // namespace stream

inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = seed;
  for (std::uint64_t p : path) s = mix_seed(s, p);
  return Rng(s);
}

}  // namespace hcl
