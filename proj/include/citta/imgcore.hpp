#pragma once

// Dense image tensors and the sampling / smoothing primitives that every
// deformation is built from. Everything here is a pure function over its
// inputs and is templated on the scalar type.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "citta/errors.hpp"

namespace citta {

template <typename Scalar>
using PlaneT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Plane = PlaneT<double>;

/// H x W x C image stored row-major as (y, x, c).
template <typename Scalar>
class ImageT {
 public:
  using value_type = Scalar;

  ImageT() = default;

  ImageT(int height, int width, int channels, Scalar fill = Scalar(0))
      : height_(height), width_(width), channels_(channels) {
    check_dims(height, width, channels);
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
  }

  ImageT(int height, int width, int channels, std::vector<Scalar> data)
      : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    check_dims(height, width, channels);
    if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
      throw InvalidArgument("image data length does not equal H*W*C");
    }
    for (Scalar v : data_) {
      if (!std::isfinite(static_cast<double>(v))) {
        throw InvalidArgument("image data contains a non-finite value");
      }
    }
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Scalar& operator()(int y, int x, int c) noexcept { return data_[index(y, x, c)]; }
  Scalar operator()(int y, int x, int c) const noexcept { return data_[index(y, x, c)]; }

  std::span<Scalar> data() noexcept { return data_; }
  std::span<const Scalar> data() const noexcept { return data_; }

  // Flattened (y, x, c) view, the order the classifier consumes.
  Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> flat() const {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }

  PlaneT<Scalar> channel(int c) const {
    PlaneT<Scalar> out(height_, width_);
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x) out(y, x) = (*this)(y, x, c);
    return out;
  }

  bool same_shape(const ImageT& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  friend bool operator==(const ImageT& a, const ImageT& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

 private:
  static void check_dims(int h, int w, int c) {
    if (h < 1 || w < 1 || c < 1) throw InvalidArgument("image dimensions must be >= 1");
  }

  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<Scalar> data_;
};

using Image = ImageT<double>;

/// Odd-length, normalized, symmetric 1-D smoothing kernel.
template <typename Scalar>
struct Kernel1DT {
  std::vector<Scalar> taps;
  int radius() const noexcept { return static_cast<int>(taps.size() / 2); }
};

using Kernel1D = Kernel1DT<double>;

template <typename Scalar = double>
Kernel1DT<Scalar> gaussian_kernel(int kappa, double blur_std) {
  if (kappa < 1 || kappa % 2 == 0) throw InvalidArgument("kernel size must be odd and >= 1");
  if (!(blur_std > 0.0) || !std::isfinite(blur_std)) {
    throw InvalidArgument("blur std must be positive and finite");
  }
  const int radius = (kappa - 1) / 2;
  std::vector<double> raw(kappa);
  for (int i = 0; i < kappa; ++i) {
    const double d = i - radius;
    raw[i] = std::exp(-(d * d) / (2.0 * blur_std * blur_std));
  }
  // Accumulate symmetrically from the tails so mirrored taps get the same sum.
  double total = raw[radius];
  for (int k = 1; k <= radius; ++k) total += raw[radius - k] + raw[radius + k];

  Kernel1DT<Scalar> kernel;
  kernel.taps.resize(kappa);
  for (int i = 0; i < kappa; ++i) kernel.taps[i] = static_cast<Scalar>(raw[i] / total);
  return kernel;
}

/// Horizontal then vertical convolution, clamp-to-edge at the borders.
template <typename Derived>
PlaneT<typename Derived::Scalar> separable_blur(const Eigen::MatrixBase<Derived>& field,
                                                const Kernel1DT<typename Derived::Scalar>& kernel) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index h = field.rows();
  const Eigen::Index w = field.cols();
  if (h < 1 || w < 1) throw InvalidArgument("blur input must be at least 1x1");
  if (kernel.taps.empty() || kernel.taps.size() % 2 == 0) throw InvalidArgument("kernel must have odd length");

  const int r = kernel.radius();
  if (r == 0 && kernel.taps[0] == Scalar(1)) return field;

  const PlaneT<Scalar> src = field;
  PlaneT<Scalar> tmp(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      Scalar acc(0);
      for (int k = -r; k <= r; ++k) {
        const Eigen::Index xs = std::clamp<Eigen::Index>(x + k, 0, w - 1);
        acc += kernel.taps[k + r] * src(y, xs);
      }
      tmp(y, x) = acc;
    }
  }
  PlaneT<Scalar> out(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) out(y, x) = Scalar(0);
    for (int k = -r; k <= r; ++k) {
      const Eigen::Index ys = std::clamp<Eigen::Index>(y + k, 0, h - 1);
      out.row(y) += kernel.taps[k + r] * tmp.row(ys);
    }
  }
  return out;
}

/// Bilinear interpolation of channel c at (x, y); coordinates are clamped
/// to [0, W-1] x [0, H-1] first. Lattice points return the stored value
/// bit-for-bit.
template <typename Scalar>
Scalar bilinear_sample(const ImageT<Scalar>& img, double x, double y, int c) {
  if (!std::isfinite(x) || !std::isfinite(y)) throw InvalidArgument("sample coordinates must be finite");
  if (c < 0 || c >= img.channels()) throw InvalidArgument("channel index out of range");

  x = std::clamp(x, 0.0, static_cast<double>(img.width() - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height() - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, img.width() - 1);
  const int y1 = std::min(y0 + 1, img.height() - 1);
  const Scalar fx = static_cast<Scalar>(x - x0);
  const Scalar fy = static_cast<Scalar>(y - y0);

  const Scalar a = img(y0, x0, c);
  if (fx == Scalar(0) && fy == Scalar(0)) return a;
  const Scalar b = img(y0, x1, c);
  const Scalar cc = img(y1, x0, c);
  const Scalar d = img(y1, x1, c);
  if (fy == Scalar(0)) return a * (1 - fx) + b * fx;
  if (fx == Scalar(0)) return a * (1 - fy) + cc * fy;
  return (a * (1 - fx) + b * fx) * (1 - fy) + (cc * (1 - fx) + d * fx) * fy;
}

namespace detail {

// Catmull-Rom (a = -0.5) weights for the stencil {i-1, i, i+1, i+2} at t in [0,1).
inline void catmull_rom_weights(double t, double w[4]) {
  const double t2 = t * t;
  const double t3 = t2 * t;
  w[0] = 0.5 * (-t3 + 2.0 * t2 - t);
  w[1] = 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0);
  w[2] = 0.5 * (-3.0 * t3 + 4.0 * t2 + t);
  w[3] = 0.5 * (t3 - t2);
}

// Pixel index of control point j on an axis of n pixels with g control points.
inline int control_pixel(int j, int g, int n) {
  return static_cast<int>(std::lround(static_cast<double>(j) * (n - 1) / (g - 1)));
}

struct AxisStencil {
  int idx[4];
  double weight[4];
};

// Each pixel falls in the segment [p_j, p_{j+1}] of pinned control pixels;
// the local parameter is linear in the pixel offset within that segment.
inline std::vector<AxisStencil> axis_stencils(int g, int n) {
  std::vector<AxisStencil> out(n);
  std::vector<int> knots(g);
  for (int j = 0; j < g; ++j) knots[j] = control_pixel(j, g, n);

  int seg = 0;
  for (int p = 0; p < n; ++p) {
    while (seg < g - 2 && p >= knots[seg + 1]) ++seg;
    const int span = knots[seg + 1] - knots[seg];
    double t = span > 0 ? static_cast<double>(p - knots[seg]) / span : 0.0;
    int base = seg;
    if (t >= 1.0) {  // last pixel of the last segment sits on the final knot
      base = seg + 1;
      t = 0.0;
    }
    AxisStencil& s = out[p];
    catmull_rom_weights(t, s.weight);
    for (int k = 0; k < 4; ++k) s.idx[k] = std::clamp(base - 1 + k, 0, g - 1);
  }
  return out;
}

}  // namespace detail

/// Dense H x W field from a G_y x G_x control grid via Catmull-Rom
/// interpolation. Control point (i, j) is pinned at pixel
/// (round(i*(H-1)/(G_y-1)), round(j*(W-1)/(G_x-1))) and is reproduced there
/// exactly; edge control rows and columns are replicated for the stencil.
template <typename Derived>
PlaneT<typename Derived::Scalar> bicubic_upsample_grid(const Eigen::MatrixBase<Derived>& control,
                                                       int out_h, int out_w) {
  using Scalar = typename Derived::Scalar;
  const int gy = static_cast<int>(control.rows());
  const int gx = static_cast<int>(control.cols());
  if (gy < 2 || gx < 2) throw InvalidArgument("control grid must be at least 2x2");
  if (out_h < 1 || out_w < 1) throw InvalidArgument("output plane must be at least 1x1");

  const auto ys = detail::axis_stencils(gy, out_h);
  const auto xs = detail::axis_stencils(gx, out_w);

  // Interpolate along x for every control row, then along y.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows(gy, out_w);
  for (int i = 0; i < gy; ++i) {
    for (int x = 0; x < out_w; ++x) {
      const auto& s = xs[x];
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += s.weight[k] * static_cast<double>(control(i, s.idx[k]));
      rows(i, x) = acc;
    }
  }
  PlaneT<Scalar> out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const auto& s = ys[y];
    for (int x = 0; x < out_w; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += s.weight[k] * rows(s.idx[k], x);
      out(y, x) = static_cast<Scalar>(acc);
    }
  }
  return out;
}

}  // namespace citta
