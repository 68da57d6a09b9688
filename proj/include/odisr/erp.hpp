// SPDX-License-Identifier: Apache-2.0
//
// Equirectangular projection geometry: sphere/plane coordinates, the
// stretching ratio, the per-row distortion map, and bicubic resampling used
// to build low/high-resolution training pairs.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "odisr/tensor.hpp"

namespace odisr {

/// Longitude theta in (-pi, pi), latitude phi in (-pi/2, pi/2), radians.
struct SphereCoord {
  double theta = 0.0;
  double phi = 0.0;
};

/// Projection-plane coordinates in radians.
struct PlaneCoord {
  double x = 0.0;
  double y = 0.0;
};

PlaneCoord erp_project(SphereCoord s);
SphereCoord erp_unproject(PlaneCoord p);

/// Area ratio sphere/plane for ERP: cos(y). Throws RangeError for |y| >= pi/2.
double stretching_ratio_erp(PlaneCoord p);

/// d(x, y)/d(theta, phi), row-major.
using Jacobian = std::array<std::array<double, 2>, 2>;

/// cos(phi) / |det J|; throws NumericError when det J == 0.
double stretching_ratio_general(const Jacobian& jacobian, double phi);

/// Per-pixel spherical weight of an H x W ERP image. Row h (0-based) holds
/// cos((h + 0.5 - H/2) * pi / H) in every column.
class DistortionMap {
 public:
  DistortionMap(std::int64_t height, std::int64_t width);

  std::int64_t height() const { return height_; }
  std::int64_t width() const { return width_; }
  double at(std::int64_t row, std::int64_t col) const;
  double row_weight(std::int64_t row) const { return rows_.at(static_cast<std::size_t>(row)); }
  const std::vector<double>& row_weights() const { return rows_; }
  /// Full H x W field, row-major.
  std::vector<double> weights() const;

  /// [1, 1, rows, cols] window of the map starting at (row0, col0); rows or
  /// cols of -1 extend to the edge. Patches keep their true-latitude weights.
  Tensor tensor(DType dtype = DType::f32, std::int64_t row0 = 0, std::int64_t rows = -1,
                std::int64_t col0 = 0, std::int64_t cols = -1) const;

 private:
  std::int64_t height_;
  std::int64_t width_;
  std::vector<double> rows_;
};

DistortionMap distortion_map(std::int64_t height, std::int64_t width);

/// 16-bit grayscale PNG with value round(weight * 65535).
void write_distortion_png(const DistortionMap& map, const std::filesystem::path& path);
/// Raw dump: u32 H, u32 W (little-endian), then H*W little-endian f64.
void write_distortion_raw(const DistortionMap& map, const std::filesystem::path& path);
std::vector<double> read_distortion_raw(const std::filesystem::path& path, std::int64_t& height,
                                        std::int64_t& width);

struct Rational {
  std::int64_t num = 1;
  std::int64_t den = 1;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

/// Keys cubic convolution kernel with a = -0.5.
double cubic_kernel(double x);

/// Bicubic resize of [b, c, h, w] by `scale` (output extent floor(n * scale)).
/// Half-pixel aligned, border replicated; on downscaling the kernel is
/// stretched by 1/scale to antialias. Not differentiable.
Tensor bicubic_resize(const Tensor& image, Rational scale);

}  // namespace odisr
