// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>

#include "odisr/ops.hpp"
#include "op_util.hpp"

namespace odisr {

using detail::check_dtypes;
using detail::cptr;
using detail::gptr;
using detail::self_grad;

namespace {

/// Bilinear stencil for one clamped coordinate pair.
template <typename T>
struct Stencil {
  std::int64_t y0, y1, x0, x1;
  T wy, wx;
  bool y_inside, x_inside;  // false when clamping zeroes the coordinate derivative
};

template <typename T>
Stencil<T> make_stencil(T y, T x, std::int64_t h, std::int64_t w) {
  Stencil<T> s{};
  const T ymax = static_cast<T>(h - 1), xmax = static_cast<T>(w - 1);
  s.y_inside = y >= T(0) && y <= ymax;
  s.x_inside = x >= T(0) && x <= xmax;
  const T yc = std::clamp(y, T(0), ymax);
  const T xc = std::clamp(x, T(0), xmax);
  s.y0 = static_cast<std::int64_t>(std::floor(yc));
  s.x0 = static_cast<std::int64_t>(std::floor(xc));
  s.y1 = std::min(s.y0 + 1, h - 1);
  s.x1 = std::min(s.x0 + 1, w - 1);
  s.wy = yc - static_cast<T>(s.y0);
  s.wx = xc - static_cast<T>(s.x0);
  return s;
}

}  // namespace

Tensor bilinear_sample(const Tensor& x, const Tensor& coords) {
  check_dtypes("bilinear_sample", x, coords);
  if (x.rank() != 4 || coords.rank() != 3 || coords.shape()[2] != 2 ||
      coords.shape()[0] != x.shape()[0])
    throw DimensionError("bilinear_sample: expected x[b,c,h,w] and coords[b,p,2], got " +
                         to_string(x.shape()) + " and " + to_string(coords.shape()));
  const std::int64_t b = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const std::int64_t p = coords.shape()[1];
  if (auto* log = active_piece_log())
    for (double v : coords.to_vector()) log->push_back(static_cast<std::int64_t>(std::floor(v)));
  Buffer out(x.dtype(), static_cast<std::size_t>(b * c * p));
  dispatch(x.dtype(), [&]<typename T>() {
    const T* px = cptr<T>(x);
    const T* pc = cptr<T>(coords);
    T* po = out.view<T>().data();
    for (std::int64_t bi = 0; bi < b; ++bi)
      for (std::int64_t pi = 0; pi < p; ++pi) {
        const auto s = make_stencil<T>(pc[(bi * p + pi) * 2], pc[(bi * p + pi) * 2 + 1], h, w);
        const T w00 = (T(1) - s.wy) * (T(1) - s.wx), w01 = (T(1) - s.wy) * s.wx;
        const T w10 = s.wy * (T(1) - s.wx), w11 = s.wy * s.wx;
        for (std::int64_t ci = 0; ci < c; ++ci) {
          const T* plane = px + (bi * c + ci) * h * w;
          po[(bi * c + ci) * p + pi] = w00 * plane[s.y0 * w + s.x0] + w01 * plane[s.y0 * w + s.x1] +
                                       w10 * plane[s.y1 * w + s.x0] + w11 * plane[s.y1 * w + s.x1];
        }
      }
  });
  return make_result({b, c, p}, std::move(out), {x, coords}, [x, coords, b, c, h, w, p](TensorImpl& self) {
    dispatch(self.data.dtype(), [&]<typename T>() {
      const T* G = self_grad<T>(self);
      const T* px = cptr<T>(x);
      const T* pc = cptr<T>(coords);
      T* gx = x.requires_grad() ? gptr<T>(x) : nullptr;
      T* gc = coords.requires_grad() ? gptr<T>(coords) : nullptr;
      for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t pi = 0; pi < p; ++pi) {
          const auto s = make_stencil<T>(pc[(bi * p + pi) * 2], pc[(bi * p + pi) * 2 + 1], h, w);
          const T w00 = (T(1) - s.wy) * (T(1) - s.wx), w01 = (T(1) - s.wy) * s.wx;
          const T w10 = s.wy * (T(1) - s.wx), w11 = s.wy * s.wx;
          T dy = 0, dx = 0;
          for (std::int64_t ci = 0; ci < c; ++ci) {
            const T g = G[(bi * c + ci) * p + pi];
            const std::int64_t base = (bi * c + ci) * h * w;
            if (gx) {
              gx[base + s.y0 * w + s.x0] += g * w00;
              gx[base + s.y0 * w + s.x1] += g * w01;
              gx[base + s.y1 * w + s.x0] += g * w10;
              gx[base + s.y1 * w + s.x1] += g * w11;
            }
            if (gc) {
              const T v00 = px[base + s.y0 * w + s.x0], v01 = px[base + s.y0 * w + s.x1];
              const T v10 = px[base + s.y1 * w + s.x0], v11 = px[base + s.y1 * w + s.x1];
              dy += g * ((T(1) - s.wx) * (v10 - v00) + s.wx * (v11 - v01));
              dx += g * ((T(1) - s.wy) * (v01 - v00) + s.wy * (v11 - v10));
            }
          }
          if (gc) {
            if (s.y_inside) gc[(bi * p + pi) * 2] += dy;
            if (s.x_inside) gc[(bi * p + pi) * 2 + 1] += dx;
          }
        }
    });
  });
}

namespace {

/// Flat-index map shared by pixel_shuffle and its inverse: entry i is the
/// index into the [b, c*s*s, h, w] layout of the i-th element of the
/// [b, c, h*s, w*s] layout.
std::vector<std::size_t> shuffle_map(std::int64_t b, std::int64_t c, std::int64_t h,
                                     std::int64_t w, std::int64_t s) {
  std::vector<std::size_t> map(static_cast<std::size_t>(b * c * h * w * s * s));
  std::size_t k = 0;
  for (std::int64_t bi = 0; bi < b; ++bi)
    for (std::int64_t ci = 0; ci < c; ++ci)
      for (std::int64_t y = 0; y < h * s; ++y)
        for (std::int64_t xq = 0; xq < w * s; ++xq) {
          const std::int64_t src_c = ci * s * s + (y % s) * s + (xq % s);
          map[k++] = static_cast<std::size_t>(((bi * c * s * s + src_c) * h + y / s) * w + xq / s);
        }
  return map;
}

Tensor permute_by(const Tensor& x, Shape shape, std::vector<std::size_t> map, bool inverse) {
  Buffer out(x.dtype(), map.size());
  auto shared = std::make_shared<const std::vector<std::size_t>>(std::move(map));
  dispatch(x.dtype(), [&]<typename T>() {
    const T* px = cptr<T>(x);
    T* po = out.view<T>().data();
    const auto& m = *shared;
    if (inverse)
      for (std::size_t i = 0; i < m.size(); ++i) po[m[i]] = px[i];
    else
      for (std::size_t i = 0; i < m.size(); ++i) po[i] = px[m[i]];
  });
  return make_result(std::move(shape), std::move(out), {x}, [x, shared, inverse](TensorImpl& self) {
    dispatch(self.data.dtype(), [&]<typename T>() {
      const T* g = self_grad<T>(self);
      T* gx = gptr<T>(x);
      const auto& m = *shared;
      if (inverse)
        for (std::size_t i = 0; i < m.size(); ++i) gx[i] += g[m[i]];
      else
        for (std::size_t i = 0; i < m.size(); ++i) gx[m[i]] += g[i];
    });
  });
}

}  // namespace

Tensor pixel_shuffle(const Tensor& x, int scale) {
  if (x.rank() != 4 || scale < 1 || x.shape()[1] % (scale * scale) != 0)
    throw DimensionError("pixel_shuffle: channels of " + to_string(x.shape()) +
                         " not divisible by scale^2 = " + std::to_string(scale * scale));
  const std::int64_t b = x.shape()[0], c = x.shape()[1] / (scale * scale), h = x.shape()[2],
                     w = x.shape()[3];
  return permute_by(x, {b, c, h * scale, w * scale}, shuffle_map(b, c, h, w, scale), false);
}

Tensor pixel_unshuffle(const Tensor& x, int scale) {
  if (x.rank() != 4 || scale < 1 || x.shape()[2] % scale != 0 || x.shape()[3] % scale != 0)
    throw DimensionError("pixel_unshuffle: spatial extents of " + to_string(x.shape()) +
                         " not divisible by " + std::to_string(scale));
  const std::int64_t b = x.shape()[0], c = x.shape()[1], h = x.shape()[2] / scale,
                     w = x.shape()[3] / scale;
  return permute_by(x, {b, c * scale * scale, h, w}, shuffle_map(b, c, h, w, scale), true);
}

}  // namespace odisr
