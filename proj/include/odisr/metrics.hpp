// SPDX-License-Identifier: Apache-2.0
//
// Distortion-weighted l1 loss and the image quality metrics.
#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "odisr/image_io.hpp"
#include "odisr/tensor.hpp"

namespace odisr {

/// Sum of |gt - out| * D. Normalized (the default) divides by the sum of D
/// over the same elements, so D = 1 gives the mean absolute error.
/// `weights` is [b or 1, 1, h, w].
Tensor ws_l1(const Tensor& out, const Tensor& gt, const Tensor& weights, bool normalized = true);

/// Single-channel image in row-major doubles.
struct Plane {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<double> values;

  double at(std::int64_t r, std::int64_t c) const {
    return values[static_cast<std::size_t>(r * width + c)];
  }
};

/// BT.601 luma of an 8-bit RGB image on the [16, 235] studio scale.
Plane luminance(const Image8& image);

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// Returns kInfinitePsnr when the images are identical.
double psnr(const Plane& a, const Plane& b, double peak = 255.0);
/// `row_weights` holds one weight per row.
double ws_psnr(const Plane& a, const Plane& b, const std::vector<double>& row_weights,
               double peak = 255.0);

/// 11x11 Gaussian (sigma 1.5) SSIM over the valid region, peak 255.
double ssim(const Plane& a, const Plane& b);
/// SSIM map averaged with the row weight of each window centre.
double ws_ssim(const Plane& a, const Plane& b, const std::vector<double>& row_weights);

struct MetricReport {
  double psnr = 0;
  double ssim = 0;
  double ws_psnr = 0;
  double ws_ssim = 0;
};

/// All four metrics on the luma channel, weighted by the ERP distortion map.
MetricReport evaluate(const Image8& sr, const Image8& hr);

struct MetricSummary {
  MetricReport mean;
  std::size_t images = 0;
  /// Images left out of the PSNR means because their error was zero.
  std::size_t infinite_psnr = 0;
  std::size_t infinite_ws_psnr = 0;
};

MetricSummary summarize(const std::vector<MetricReport>& reports);

}  // namespace odisr
