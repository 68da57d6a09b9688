// SPDX-License-Identifier: Apache-2.0
#include "odisr/erp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "odisr/error.hpp"
#include "odisr/image_io.hpp"

namespace odisr {

namespace {

constexpr double kPi = std::numbers::pi;

void check_sphere(SphereCoord s) {
  if (!(s.theta > -kPi && s.theta < kPi) || !(s.phi > -kPi / 2 && s.phi < kPi / 2))
    throw RangeError("sphere coordinate (" + std::to_string(s.theta) + ", " +
                     std::to_string(s.phi) + ") outside (-pi, pi) x (-pi/2, pi/2)");
}

void check_plane(PlaneCoord p) {
  if (!(p.x > -kPi && p.x < kPi) || !(p.y > -kPi / 2 && p.y < kPi / 2))
    throw RangeError("plane coordinate (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                     ") outside the ERP domain");
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated distortion dump header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

PlaneCoord erp_project(SphereCoord s) {
  check_sphere(s);
  return {s.theta, s.phi};
}

SphereCoord erp_unproject(PlaneCoord p) {
  check_plane(p);
  return {p.x, p.y};
}

double stretching_ratio_erp(PlaneCoord p) {
  check_plane(p);
  return std::cos(p.y);
}

double stretching_ratio_general(const Jacobian& j, double phi) {
  const double det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
  if (det == 0.0 || !std::isfinite(det)) throw NumericError("singular projection Jacobian");
  return std::cos(phi) / std::abs(det);
}

DistortionMap::DistortionMap(std::int64_t height, std::int64_t width)
    : height_(height), width_(width) {
  if (height < 1 || width < 1)
    throw DimensionError("distortion map needs positive extents, got " + std::to_string(height) +
                         " x " + std::to_string(width));
  rows_.resize(static_cast<std::size_t>(height));
  const double H = static_cast<double>(height);
  // The argument is antisymmetric in h <-> H-1-h, so compute the top half
  // and mirror to make the symmetry exact.
  for (std::int64_t h = 0; h < (height + 1) / 2; ++h) {
    const double v = std::cos((static_cast<double>(h) + 0.5 - H / 2) * kPi / H);
    rows_[static_cast<std::size_t>(h)] = v;
    rows_[static_cast<std::size_t>(height - 1 - h)] = v;
  }
}

double DistortionMap::at(std::int64_t row, std::int64_t col) const {
  if (row < 0 || row >= height_ || col < 0 || col >= width_)
    throw RangeError("distortion map index out of range");
  return rows_[static_cast<std::size_t>(row)];
}

std::vector<double> DistortionMap::weights() const {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(height_ * width_));
  for (double v : rows_) out.insert(out.end(), static_cast<std::size_t>(width_), v);
  return out;
}

Tensor DistortionMap::tensor(DType dtype, std::int64_t row0, std::int64_t rows, std::int64_t col0,
                             std::int64_t cols) const {
  if (rows < 0) rows = height_ - row0;
  if (cols < 0) cols = width_ - col0;
  if (row0 < 0 || col0 < 0 || rows < 1 || cols < 1 || row0 + rows > height_ ||
      col0 + cols > width_)
    throw DimensionError("distortion window exceeds the " + std::to_string(height_) + " x " +
                         std::to_string(width_) + " map");
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(rows * cols));
  for (std::int64_t h = row0; h < row0 + rows; ++h)
    v.insert(v.end(), static_cast<std::size_t>(cols), rows_[static_cast<std::size_t>(h)]);
  return Tensor::from_values({1, 1, rows, cols}, v, dtype);
}

DistortionMap distortion_map(std::int64_t height, std::int64_t width) {
  return DistortionMap(height, width);
}

void write_distortion_png(const DistortionMap& map, const std::filesystem::path& path) {
  Image16 img;
  img.height = map.height();
  img.width = map.width();
  img.pixels.reserve(static_cast<std::size_t>(img.height * img.width));
  for (double v : map.weights())
    img.pixels.push_back(static_cast<std::uint16_t>(std::lround(v * 65535.0)));
  write_png16(path, img);
}

void write_distortion_raw(const DistortionMap& map, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  put_u32(os, static_cast<std::uint32_t>(map.height()));
  put_u32(os, static_cast<std::uint32_t>(map.width()));
  for (double v : map.weights()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u32(os, static_cast<std::uint32_t>(bits));
    put_u32(os, static_cast<std::uint32_t>(bits >> 32));
  }
  if (!os) throw IoError("write failed for " + path.string());
}

std::vector<double> read_distortion_raw(const std::filesystem::path& path, std::int64_t& height,
                                        std::int64_t& width) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  height = get_u32(is);
  width = get_u32(is);
  std::vector<double> out(static_cast<std::size_t>(height * width));
  for (auto& v : out) {
    std::uint64_t lo = get_u32(is);
    std::uint64_t hi = get_u32(is);
    std::uint64_t bits = lo | (hi << 32);
    std::memcpy(&v, &bits, 8);
  }
  return out;
}

double cubic_kernel(double x) {
  constexpr double a = -0.5;
  const double t = std::abs(x);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return (((t - 5.0) * t + 8.0) * t - 4.0) * a;
  return 0.0;
}

namespace {

// Taps and normalized weights for every output index along one axis.
struct AxisPlan {
  std::vector<std::vector<std::int64_t>> index;
  std::vector<std::vector<double>> weight;
};

AxisPlan plan_axis(std::int64_t in, std::int64_t out, double scale) {
  AxisPlan plan;
  plan.index.resize(static_cast<std::size_t>(out));
  plan.weight.resize(static_cast<std::size_t>(out));
  const double stretch = scale < 1.0 ? scale : 1.0;
  const double support = 2.0 / stretch;
  for (std::int64_t o = 0; o < out; ++o) {
    const double u = (static_cast<double>(o) + 0.5) / scale - 0.5;
    const auto lo = static_cast<std::int64_t>(std::floor(u - support));
    const auto hi = static_cast<std::int64_t>(std::ceil(u + support));
    auto& idx = plan.index[static_cast<std::size_t>(o)];
    auto& w = plan.weight[static_cast<std::size_t>(o)];
    double total = 0.0;
    for (std::int64_t j = lo; j <= hi; ++j) {
      const double k = cubic_kernel((u - static_cast<double>(j)) * stretch);
      if (k == 0.0) continue;
      idx.push_back(std::clamp<std::int64_t>(j, 0, in - 1));
      w.push_back(k);
      total += k;
    }
    for (auto& x : w) x /= total;
  }
  return plan;
}

// Weighted sum written relative to the first tap so a constant input maps
// to itself exactly.
double apply(const double* src, std::ptrdiff_t stride, const std::vector<std::int64_t>& idx,
             const std::vector<double>& w) {
  const double ref = src[idx[0] * stride];
  double acc = 0.0;
  for (std::size_t t = 0; t < idx.size(); ++t) acc += w[t] * (src[idx[t] * stride] - ref);
  return ref + acc;
}

}  // namespace

Tensor bicubic_resize(const Tensor& image, Rational scale) {
  if (scale.num <= 0 || scale.den <= 0) throw ConfigError("bicubic scale must be positive");
  if (image.rank() != 4)
    throw DimensionError("bicubic_resize expects [b, c, h, w], got " + to_string(image.shape()));
  const std::int64_t planes = image.dim(0) * image.dim(1);
  const std::int64_t h = image.dim(2), w = image.dim(3);
  const std::int64_t oh = h * scale.num / scale.den;
  const std::int64_t ow = w * scale.num / scale.den;
  if (oh < 1 || ow < 1)
    throw DimensionError("bicubic output extent below 1 for input " + to_string(image.shape()));
  if (scale.num == scale.den) return image.detach();

  const double s = scale.value();
  const AxisPlan rows = plan_axis(h, oh, s);
  const AxisPlan cols = plan_axis(w, ow, s);
  const std::vector<double> src = image.to_vector();
  std::vector<double> tmp(static_cast<std::size_t>(planes * h * ow));
  std::vector<double> dst(static_cast<std::size_t>(planes * oh * ow));
  for (std::int64_t p = 0; p < planes; ++p) {
    for (std::int64_t y = 0; y < h; ++y) {
      const double* row = src.data() + (p * h + y) * w;
      for (std::int64_t x = 0; x < ow; ++x)
        tmp[static_cast<std::size_t>((p * h + y) * ow + x)] =
            apply(row, 1, cols.index[static_cast<std::size_t>(x)], cols.weight[static_cast<std::size_t>(x)]);
    }
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t x = 0; x < ow; ++x)
        dst[static_cast<std::size_t>((p * oh + y) * ow + x)] =
            apply(tmp.data() + p * h * ow + x, ow, rows.index[static_cast<std::size_t>(y)],
                  rows.weight[static_cast<std::size_t>(y)]);
  }
  return Tensor::from_values({image.dim(0), image.dim(1), oh, ow}, dst, image.dtype());
}

}  // namespace odisr
