#include "citta/rng.hpp"

#include <cmath>
#include <numbers>

namespace citta {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
    const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

GaussianStream::GaussianStream(const SeededStream& s) : lane_(s.lane) {
  // Fold the seed and image id into the 64-bit key; variant and lane live
  // in the counter so distinct streams never share counter space.
  const std::uint64_t k = splitmix64(s.seed ^ splitmix64(s.image_id + 0x632BE59BD9B4E019ull));
  key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
  variant_ = s.variant_index;
}

std::array<double, 2> GaussianStream::pair(std::uint64_t block) const {
  const auto r = philox4x32(
      {static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32), variant_, lane_}, key_);
  const std::uint64_t a = (static_cast<std::uint64_t>(r[0]) << 32) | r[1];
  const std::uint64_t b = (static_cast<std::uint64_t>(r[2]) << 32) | r[3];
  const double u1 = unit_open_closed(a);
  const double u2 = unit_open_closed(b);
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  return {radius * std::cos(angle), radius * std::sin(angle)};
}

Plane sample_gaussian_plane(const SeededStream& stream, int h, int w, double std_dev) {
  if (!(std_dev >= 0.0) || !std::isfinite(std_dev)) throw InvalidArgument("std must be finite and >= 0");
  if (h < 1 || w < 1) throw InvalidArgument("plane dimensions must be >= 1");
  Plane out(h, w);
  if (std_dev == 0.0) {
    out.setZero();
    return out;
  }
  const GaussianStream g(stream);
  double* p = out.data();
  const std::size_t n = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < n; i += 2) {
    const auto z = g.pair(i / 2);
    p[i] = std_dev * z[0];
    if (i + 1 < n) p[i + 1] = std_dev * z[1];
  }
  return out;
}

}  // namespace citta
