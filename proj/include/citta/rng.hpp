#pragma once

// Counter-based random streams. A stream is keyed by (seed, image_id,
// variant_index, lane); draw k of a stream is a pure function of that key and
// k, so any subset of variants can be generated in any order or on any
// thread with identical results.

#include <array>
#include <cstdint>

#include "citta/imgcore.hpp"

namespace citta {

struct SeededStream {
  std::uint64_t seed = 0;
  std::uint64_t image_id = 0;
  std::uint32_t variant_index = 0;
  // Independent sub-streams within one variant (dx noise, dy noise, ...).
  std::uint32_t lane = 0;

  SeededStream with_lane(std::uint32_t l) const {
    SeededStream s = *this;
    s.lane = l;
    return s;
  }
};

/// Philox4x32-10 block function.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

class GaussianStream {
 public:
  explicit GaussianStream(const SeededStream& stream);

  /// Standard normals via Box-Muller: block k of Philox yields normals 2k and 2k+1.
  std::array<double, 2> pair(std::uint64_t block) const;

  std::array<std::uint32_t, 2> key() const { return key_; }

 private:
  std::array<std::uint32_t, 2> key_;
  std::uint32_t variant_ = 0;
  std::uint32_t lane_ = 0;
};

/// i.i.d. N(0, std^2) plane, filled row-major from consecutive draws.
Plane sample_gaussian_plane(const SeededStream& stream, int h, int w, double std_dev);

// Uniform (0,1] double from a 64-bit word using its top 53 bits.
inline double unit_open_closed(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
}

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace citta
