#include "citta/harness.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "citta/io.hpp"
#include "citta/rng.hpp"

namespace citta {

namespace {

// Sequential uniforms/normals from one counter-based stream.
class Draws {
 public:
  explicit Draws(const SeededStream& s) : gauss_(s) {}

  double uniform(double lo, double hi) {
    const auto r = philox4x32({static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
                               0xA5A5A5A5u, 0x5A5A5A5Au},
                              gauss_.key());
    ++counter_;
    const std::uint64_t bits = (static_cast<std::uint64_t>(r[0]) << 32) | r[1];
    return lo + (hi - lo) * (unit_open_closed(bits) - 0x1.0p-53);
  }

  double normal() { return gauss_.pair(normal_block_++)[0]; }

 private:
  GaussianStream gauss_;
  std::uint64_t counter_ = 0;
  std::uint64_t normal_block_ = 0;
};

bool inside(int shape, double px, double py, double cx, double cy, double r) {
  const double dx = px - cx;
  const double dy = py - cy;
  switch (shape) {
    case 0: return dx * dx + dy * dy <= r * r;  // disk
    case 1: return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;  // square
    default: {
      // Upward triangle with apex (cx, cy - r) and base at cy + 0.8 r.
      if (dy > 0.8 * r || dy < -r) return false;
      const double half_width = r * (dy + r) / (1.8 * r);
      return std::abs(dx) <= half_width;
    }
  }
}

}  // namespace

Image render_synthetic(int shape_class, SyntheticDomain domain, std::uint64_t seed, std::uint64_t index, int size) {
  const std::uint32_t domain_tag = domain == SyntheticDomain::source ? 0u : 1u;
  Draws draws(SeededStream{seed, index, domain_tag, 0x5EEDu});
  const double lo = 0.3 * size;
  const double hi = 0.7 * size;
  const double cx = draws.uniform(lo, hi);
  const double cy = draws.uniform(lo, hi);
  const double r = draws.uniform(0.18 * size, 0.3 * size);

  // Shifted-domain texture: oriented high-frequency stripes.
  const double theta = draws.uniform(0.0, std::numbers::pi);
  const double freq = draws.uniform(0.25, 0.4);
  const double phase = draws.uniform(0.0, 2.0 * std::numbers::pi);

  Image img(size, size, 1);
  constexpr int kSuper = 4;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy)
        for (int sx = 0; sx < kSuper; ++sx)
          hits += inside(shape_class, x + (sx + 0.5) / kSuper, y + (sy + 0.5) / kSuper, cx, cy, r);
      const double coverage = static_cast<double>(hits) / (kSuper * kSuper);
      double v = 0.15 + 0.7 * coverage;
      if (domain == SyntheticDomain::shifted) {
        const double t = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * freq *
                                                  (x * std::cos(theta) + y * std::sin(theta)) + phase);
        v = 0.55 * v + 0.45 * t;
      }
      v += 0.03 * draws.normal();
      img(y, x, 0) = std::clamp(v, 0.0, 1.0);
    }
  }
  return img;
}

SyntheticDataset generate_synthetic_dg(const std::filesystem::path& out_dir, const SyntheticOptions& opts) {
  if (opts.per_domain < 1) throw InvalidArgument("per_domain must be >= 1");
  if (opts.classes < 1 || opts.classes > 3) throw InvalidArgument("synthetic shapes support 1 to 3 classes");
  if (opts.size < 8) throw InvalidArgument("synthetic image size must be >= 8");

  std::error_code ec;
  SyntheticDataset ds{out_dir / "source.csv", out_dir / "shifted.csv"};
  for (const auto& [name, domain] : {std::pair{"source", SyntheticDomain::source},
                                     std::pair{"shifted", SyntheticDomain::shifted}}) {
    std::filesystem::create_directories(out_dir / name, ec);
    if (ec) throw IoError("cannot create " + (out_dir / name).string() + ": " + ec.message());
    Manifest m;
    m.base_dir = out_dir.string();
    for (int i = 0; i < opts.per_domain; ++i) {
      const int label = i % opts.classes;
      char file[32];
      std::snprintf(file, sizeof file, "%s/%05d.imgf", name, i);
      io::write_imgf(out_dir / file,
                     render_synthetic(label, domain, opts.seed, static_cast<std::uint64_t>(i), opts.size));
      m.entries.push_back({file, label});
    }
    write_manifest(domain == SyntheticDomain::source ? ds.source_manifest : ds.shifted_manifest, m);
  }
  return ds;
}

}  // namespace citta
