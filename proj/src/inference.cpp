// SPDX-License-Identifier: Apache-2.0
#include "odisr/inference.hpp"

#include <algorithm>

#include "odisr/erp.hpp"
#include "odisr/error.hpp"
#include "odisr/ops.hpp"

namespace odisr {

Tensor super_resolve(const Model& model, const Tensor& lr, TileOptions opts) {
  if (lr.rank() != 4 || lr.dim(0) != 1)
    throw DimensionError("super_resolve expects one [1, C, h, w] image, got " + to_string(lr.shape()));
  if (opts.tile < 0 || opts.overlap < 0) throw ConfigError("tile and overlap must be non-negative");
  NoGradGuard no_grad;
  const std::int64_t h = lr.dim(2), w = lr.dim(3), s = model.config().scale;
  const DistortionMap map = distortion_map(h, w);
  const DType dt = lr.dtype();
  if (opts.tile == 0 || (h <= opts.tile && w <= opts.tile)) return model.forward(lr, map.tensor(dt));

  const std::int64_t t = opts.tile, o = opts.overlap, c = lr.dim(1);
  std::vector<double> out(static_cast<std::size_t>(c * h * s * w * s));
  for (std::int64_t y = 0; y < h; y += t)
    for (std::int64_t x = 0; x < w; x += t) {
      const std::int64_t y0 = std::max<std::int64_t>(0, y - o), y1 = std::min(h, y + t + o);
      const std::int64_t x0 = std::max<std::int64_t>(0, x - o), x1 = std::min(w, x + t + o);
      const Tensor patch = narrow(narrow(lr, 2, y0, y1 - y0), 3, x0, x1 - x0);
      const auto sr = model.forward(patch, map.tensor(dt, y0, y1 - y0, x0, x1 - x0)).to_vector();
      const std::int64_t ph = (y1 - y0) * s, pw = (x1 - x0) * s;
      const std::int64_t ch = std::min(t, h - y) * s, cw = std::min(t, w - x) * s;
      const std::int64_t oy = (y - y0) * s, ox = (x - x0) * s;
      for (std::int64_t ci = 0; ci < c; ++ci)
        for (std::int64_t r = 0; r < ch; ++r)
          std::copy_n(sr.begin() + ((ci * ph + oy + r) * pw + ox), cw,
                      out.begin() + ((ci * h * s + y * s + r) * w * s + x * s));
    }
  return Tensor::from_values({1, c, h * s, w * s}, out, dt);
}

Image8 super_resolve(const Model& model, const Image8& lr, TileOptions opts) {
  return tensor_to_image(super_resolve(model, image_to_tensor(lr, model.config().dtype), opts));
}

}  // namespace odisr
