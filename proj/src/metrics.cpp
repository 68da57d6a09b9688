// SPDX-License-Identifier: Apache-2.0
#include "odisr/metrics.hpp"

#include <cmath>

#include "odisr/erp.hpp"
#include "odisr/error.hpp"
#include "odisr/ops.hpp"

namespace odisr {

Tensor ws_l1(const Tensor& out, const Tensor& gt, const Tensor& weights, bool normalized) {
  if (out.shape() != gt.shape())
    throw DimensionError("ws_l1: output " + to_string(out.shape()) + " vs target " + to_string(gt.shape()));
  if (out.rank() != 4 || weights.rank() != 4 || weights.dim(1) != 1 || weights.dim(2) != out.dim(2) ||
      weights.dim(3) != out.dim(3) || (weights.dim(0) != 1 && weights.dim(0) != out.dim(0)))
    throw DimensionError("ws_l1: weights " + to_string(weights.shape()) + " do not match " +
                         to_string(out.shape()));
  Tensor w = expand(weights, out.shape());
  Tensor total = sum(mul(abs(sub(gt, out)), w));
  if (!normalized) return total;
  double norm = 0;
  for (double v : weights.to_vector()) norm += v;
  norm *= static_cast<double>(out.dim(1)) * static_cast<double>(out.dim(0) / weights.dim(0));
  return mul_scalar(total, 1.0 / norm);
}

Plane luminance(const Image8& image) {
  Plane p{image.height, image.width, std::vector<double>(static_cast<std::size_t>(image.height * image.width))};
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    const double r = image.pixels[3 * i], g = image.pixels[3 * i + 1], b = image.pixels[3 * i + 2];
    p.values[i] = 16.0 + (65.481 * r + 128.553 * g + 24.966 * b) / 255.0;
  }
  return p;
}

namespace {

void check_pair(const Plane& a, const Plane& b) {
  if (a.height != b.height || a.width != b.width)
    throw DimensionError("metric inputs differ in size: " + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                         std::to_string(b.width));
}

void check_rows(const Plane& a, const std::vector<double>& rows) {
  if (static_cast<std::int64_t>(rows.size()) != a.height)
    throw DimensionError("metric row weights have " + std::to_string(rows.size()) + " entries for " +
                         std::to_string(a.height) + " rows");
}

double psnr_from_mse(double mse, double peak) {
  if (!(peak > 0)) throw RangeError("PSNR peak must be positive");
  if (mse == 0) return kInfinitePsnr;
  return 10.0 * std::log10(peak * peak / mse);
}

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

// Valid-region SSIM map, (H - 10) x (W - 10).
Plane ssim_map(const Plane& a, const Plane& b) {
  check_pair(a, b);
  if (a.height < kWindow || a.width < kWindow)
    throw DimensionError("SSIM needs at least 11x11 pixels, got " + std::to_string(a.height) + "x" +
                         std::to_string(a.width));
  double g[kWindow];
  double gsum = 0;
  for (int i = 0; i < kWindow; ++i) {
    const double x = i - kWindow / 2;
    g[i] = std::exp(-x * x / (2 * kSigma * kSigma));
    gsum += g[i];
  }
  for (double& v : g) v /= gsum;

  const std::int64_t H = a.height, W = a.width, oh = H - kWindow + 1, ow = W - kWindow + 1;
  // Separable filter of the five moment images.
  auto filter = [&](auto value) {
    std::vector<double> horiz(static_cast<std::size_t>(H * ow));
    for (std::int64_t r = 0; r < H; ++r)
      for (std::int64_t c = 0; c < ow; ++c) {
        double s = 0;
        for (int k = 0; k < kWindow; ++k) s += g[k] * value(r, c + k);
        horiz[static_cast<std::size_t>(r * ow + c)] = s;
      }
    std::vector<double> out(static_cast<std::size_t>(oh * ow));
    for (std::int64_t r = 0; r < oh; ++r)
      for (std::int64_t c = 0; c < ow; ++c) {
        double s = 0;
        for (int k = 0; k < kWindow; ++k) s += g[k] * horiz[static_cast<std::size_t>((r + k) * ow + c)];
        out[static_cast<std::size_t>(r * ow + c)] = s;
      }
    return out;
  };
  const auto mu_a = filter([&](auto r, auto c) { return a.at(r, c); });
  const auto mu_b = filter([&](auto r, auto c) { return b.at(r, c); });
  const auto aa = filter([&](auto r, auto c) { return a.at(r, c) * a.at(r, c); });
  const auto bb = filter([&](auto r, auto c) { return b.at(r, c) * b.at(r, c); });
  const auto ab = filter([&](auto r, auto c) { return a.at(r, c) * b.at(r, c); });

  const double c1 = (0.01 * 255) * (0.01 * 255), c2 = (0.03 * 255) * (0.03 * 255);
  Plane m{oh, ow, std::vector<double>(mu_a.size())};
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = aa[i] - ma * ma, vb = bb[i] - mb * mb, cov = ab[i] - ma * mb;
    const double num = (2 * ma * mb + c1) * (2 * cov + c2);
    const double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
    m.values[i] = num == den ? 1.0 : num / den;
  }
  return m;
}

}  // namespace

// Uniform-weight forms share the weighted summation order, so the weighted
// metrics reduce to them exactly.
double psnr(const Plane& a, const Plane& b, double peak) {
  return ws_psnr(a, b, std::vector<double>(static_cast<std::size_t>(a.height), 1.0), peak);
}

double ws_psnr(const Plane& a, const Plane& b, const std::vector<double>& row_weights, double peak) {
  check_pair(a, b);
  check_rows(a, row_weights);
  double se = 0, wsum = 0;
  for (std::int64_t r = 0; r < a.height; ++r) {
    double row = 0;
    for (std::int64_t c = 0; c < a.width; ++c) {
      const double d = a.at(r, c) - b.at(r, c);
      row += d * d;
    }
    const double w = row_weights[static_cast<std::size_t>(r)];
    se += w * row;
    wsum += w * static_cast<double>(a.width);
  }
  return psnr_from_mse(se / wsum, peak);
}

double ssim(const Plane& a, const Plane& b) {
  return ws_ssim(a, b, std::vector<double>(static_cast<std::size_t>(a.height), 1.0));
}

double ws_ssim(const Plane& a, const Plane& b, const std::vector<double>& row_weights) {
  check_rows(a, row_weights);
  const Plane m = ssim_map(a, b);
  double s = 0, wsum = 0;
  for (std::int64_t r = 0; r < m.height; ++r) {
    const double w = row_weights[static_cast<std::size_t>(r + kWindow / 2)];
    double row = 0;
    for (std::int64_t c = 0; c < m.width; ++c) row += m.at(r, c);
    s += w * row;
    wsum += w * static_cast<double>(m.width);
  }
  return s / wsum;
}

MetricReport evaluate(const Image8& sr, const Image8& hr) {
  const Plane a = luminance(sr), b = luminance(hr);
  const DistortionMap map = distortion_map(hr.height, hr.width);
  const auto& rows = map.row_weights();
  return {psnr(a, b), ssim(a, b), ws_psnr(a, b, rows), ws_ssim(a, b, rows)};
}

MetricSummary summarize(const std::vector<MetricReport>& reports) {
  MetricSummary s;
  s.images = reports.size();
  std::size_t finite_p = 0, finite_wp = 0;
  for (const auto& r : reports) {
    if (std::isinf(r.psnr)) ++s.infinite_psnr;
    else { s.mean.psnr += r.psnr; ++finite_p; }
    if (std::isinf(r.ws_psnr)) ++s.infinite_ws_psnr;
    else { s.mean.ws_psnr += r.ws_psnr; ++finite_wp; }
    s.mean.ssim += r.ssim;
    s.mean.ws_ssim += r.ws_ssim;
  }
  s.mean.psnr = finite_p ? s.mean.psnr / static_cast<double>(finite_p) : kInfinitePsnr;
  s.mean.ws_psnr = finite_wp ? s.mean.ws_psnr / static_cast<double>(finite_wp) : kInfinitePsnr;
  if (!reports.empty()) {
    s.mean.ssim /= static_cast<double>(reports.size());
    s.mean.ws_ssim /= static_cast<double>(reports.size());
  }
  return s;
}

}  // namespace odisr
