#include "citta/deform.hpp"

#include "citta/pipeline.hpp"

namespace citta {

void DeformationConfig::validate() const {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw InvalidArgument("sigma must be finite and >= 0");
  if (kappa && (*kappa < 1 || *kappa % 2 == 0)) throw InvalidArgument("kappa must be odd and >= 1");
  if (grid_rows < 2 || grid_cols < 2) throw InvalidArgument("grid must be at least 2x2");
  if (!(elastic_fraction >= 0.0 && elastic_fraction <= 1.0)) {
    throw InvalidArgument("elastic_fraction must be in [0, 1]");
  }
}

int DeformationConfig::resolved_kappa(int h, int w) const {
  if (kappa) return *kappa;
  return 2 * static_cast<int>(std::floor(0.05 * std::min(h, w))) + 1;
}

namespace {

// Population std about the plane's own mean.
double plane_std(const Plane& p) {
  const double mean = p.mean();
  return std::sqrt((p.array() - mean).square().mean());
}

}  // namespace

DisplacementField elastic_field(const SeededStream& stream, int h, int w, const DeformationConfig& cfg) {
  cfg.validate();
  const double sigma_px = cfg.sigma_px(h, w);
  if (sigma_px == 0.0) return DisplacementField::zeros(h, w);

  const int kappa = cfg.resolved_kappa(h, w);
  const Kernel1D kernel = gaussian_kernel(kappa, kappa / 4.0);

  DisplacementField f;
  f.dx = separable_blur(sample_gaussian_plane(stream.with_lane(kLaneElasticX), h, w, sigma_px), kernel);
  f.dy = separable_blur(sample_gaussian_plane(stream.with_lane(kLaneElasticY), h, w, sigma_px), kernel);
  if (cfg.rescale_after_smoothing) {
    for (Plane* p : {&f.dx, &f.dy}) {
      const double s = plane_std(*p);
      if (s >= 1e-12) *p *= sigma_px / s;
    }
  }
  return f;
}

std::pair<Plane, Plane> grid_controls(const SeededStream& stream, int h, int w, const DeformationConfig& cfg) {
  cfg.validate();
  const double sigma_px = cfg.sigma_px(h, w);
  return {sample_gaussian_plane(stream.with_lane(kLaneGridX), cfg.grid_rows, cfg.grid_cols, sigma_px),
          sample_gaussian_plane(stream.with_lane(kLaneGridY), cfg.grid_rows, cfg.grid_cols, sigma_px)};
}

DisplacementField grid_field_from_controls(const Plane& control_dx, const Plane& control_dy, int h, int w) {
  return {bicubic_upsample_grid(control_dx, h, w), bicubic_upsample_grid(control_dy, h, w)};
}

DisplacementField grid_field(const SeededStream& stream, int h, int w, const DeformationConfig& cfg) {
  if (cfg.sigma_px(h, w) == 0.0) {
    cfg.validate();
    return DisplacementField::zeros(h, w);
  }
  const auto [cx, cy] = grid_controls(stream, h, w, cfg);
  return grid_field_from_controls(cx, cy, h, w);
}

int elastic_count(int n, double elastic_fraction) {
  return static_cast<int>(std::floor(elastic_fraction * n + 0.5));
}

DeformKind variant_kind(int index, int n, const DeformationConfig& cfg) {
  return index < elastic_count(n, cfg.elastic_fraction) ? DeformKind::elastic : DeformKind::grid;
}

DisplacementField variant_field(const SeededStream& stream, int h, int w, DeformKind kind,
                                const DeformationConfig& cfg) {
  return kind == DeformKind::elastic ? elastic_field(stream, h, w, cfg) : grid_field(stream, h, w, cfg);
}

std::vector<Image> make_variants(const Image& img, int n, const DeformationConfig& cfg, std::uint64_t seed,
                                 std::uint64_t image_id, int workers) {
  if (n < 0) throw InvalidArgument("variant count must be >= 0");
  cfg.validate();
  std::vector<Image> out(static_cast<std::size_t>(n));
  const int h = img.height();
  const int w = img.width();
  parallel_for(out.size(), workers, [&](std::size_t i) {
    if (cfg.sigma_px(h, w) == 0.0) {
      out[i] = img;
      return;
    }
    const SeededStream stream{seed, image_id, static_cast<std::uint32_t>(i), 0};
    const auto field = variant_field(stream, h, w, variant_kind(static_cast<int>(i), n, cfg), cfg);
    out[i] = warp(img, field);
  });
  return out;
}

Image field_as_image(const DisplacementField& field) {
  Image out(field.height(), field.width(), 2);
  for (int y = 0; y < field.height(); ++y) {
    for (int x = 0; x < field.width(); ++x) {
      out(y, x, 0) = field.dx(y, x);
      out(y, x, 1) = field.dy(y, x);
    }
  }
  return out;
}

}  // namespace citta
