#pragma once

// Class-preserving spatial deformations: elastic (smoothed per-pixel noise)
// and grid (jittered control points, bicubic-interpolated). Both draw their
// displacements from N(0, sigma_px^2) with sigma_px = sigma * min(H, W).

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "citta/imgcore.hpp"
#include "citta/rng.hpp"

namespace citta {

struct DeformationConfig {
  double sigma = 0.01;             // fraction of min(H, W)
  std::optional<int> kappa;        // elastic kernel size; unset = auto from image size
  int grid_rows = 4;
  int grid_cols = 4;
  double elastic_fraction = 0.5;   // share of variants that are elastic
  bool rescale_after_smoothing = true;

  void validate() const;

  /// 2*floor(0.05*min(H,W)) + 1 unless kappa is set explicitly.
  int resolved_kappa(int h, int w) const;

  double sigma_px(int h, int w) const { return sigma * std::min(h, w); }
};

template <typename Scalar>
struct DisplacementFieldT {
  PlaneT<Scalar> dx;
  PlaneT<Scalar> dy;

  int height() const { return static_cast<int>(dx.rows()); }
  int width() const { return static_cast<int>(dx.cols()); }

  static DisplacementFieldT zeros(int h, int w) {
    return {PlaneT<Scalar>::Zero(h, w), PlaneT<Scalar>::Zero(h, w)};
  }
};

using DisplacementField = DisplacementFieldT<double>;

enum class DeformKind { elastic, grid };

// Lanes used inside a variant's stream.
inline constexpr std::uint32_t kLaneElasticX = 0;
inline constexpr std::uint32_t kLaneElasticY = 1;
inline constexpr std::uint32_t kLaneGridX = 2;
inline constexpr std::uint32_t kLaneGridY = 3;

DisplacementField elastic_field(const SeededStream& stream, int h, int w, const DeformationConfig& cfg);

DisplacementField grid_field(const SeededStream& stream, int h, int w, const DeformationConfig& cfg);

/// Grid field from explicit control displacements (rows x cols per axis).
DisplacementField grid_field_from_controls(const Plane& control_dx, const Plane& control_dy, int h, int w);

/// The control displacements grid_field would draw for this stream.
std::pair<Plane, Plane> grid_controls(const SeededStream& stream, int h, int w, const DeformationConfig& cfg);

/// out(y, x, c) = img(x + dx(y, x), y + dy(y, x), c), bilinear with clamping.
template <typename Scalar>
ImageT<Scalar> warp(const ImageT<Scalar>& img, const DisplacementFieldT<Scalar>& field) {
  if (field.height() != img.height() || field.width() != img.width() ||
      field.dy.rows() != field.dx.rows() || field.dy.cols() != field.dx.cols()) {
    throw InvalidArgument("displacement field does not match image dimensions");
  }
  ImageT<Scalar> out(img.height(), img.width(), img.channels());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double sx = x + static_cast<double>(field.dx(y, x));
      const double sy = y + static_cast<double>(field.dy(y, x));
      for (int c = 0; c < img.channels(); ++c) out(y, x, c) = bilinear_sample(img, sx, sy, c);
    }
  }
  return out;
}

/// Number of elastic variants among n: round(fraction * n), ties up.
int elastic_count(int n, double elastic_fraction);

DeformKind variant_kind(int index, int n, const DeformationConfig& cfg);

DisplacementField variant_field(const SeededStream& stream, int h, int w, DeformKind kind,
                                const DeformationConfig& cfg);

/// N deformed copies of img; variant i (0-based) uses stream (seed, image_id, i).
/// The result does not depend on `workers`.
std::vector<Image> make_variants(const Image& img, int n, const DeformationConfig& cfg, std::uint64_t seed,
                                 std::uint64_t image_id, int workers = 1);

/// Two-channel IMGF-compatible dump of a field (c0 = dx, c1 = dy) for inspection.
Image field_as_image(const DisplacementField& field);

}  // namespace citta
