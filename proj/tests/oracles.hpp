// SPDX-License-Identifier: Apache-2.0
//
// Loop-level reference implementations shared by the unit tests and the
// acceptance run.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "odisr/attention.hpp"

namespace odisr::testing {

// 1x1 convolution by explicit loops: [b, cin, hw] -> [b, cout, hw].
inline std::vector<double> pointwise(const std::vector<double>& x, std::int64_t b, std::int64_t cin,
                                     std::int64_t hw, const Conv& conv) {
  const auto w = conv.weight.to_vector(), bias = conv.bias.to_vector();
  const std::int64_t cout = conv.weight.dim(0);
  std::vector<double> y(static_cast<std::size_t>(b * cout * hw));
  for (std::int64_t n = 0; n < b; ++n)
    for (std::int64_t o = 0; o < cout; ++o)
      for (std::int64_t i = 0; i < hw; ++i) {
        double s = bias[static_cast<std::size_t>(o)];
        for (std::int64_t c = 0; c < cin; ++c)
          s += w[static_cast<std::size_t>(o * cin + c)] * x[static_cast<std::size_t>((n * cin + c) * hw + i)];
        y[static_cast<std::size_t>((n * cout + o) * hw + i)] = s;
      }
  return y;
}

// Deformable attention with zero offsets by explicit gathers at the
// reference points, clamped to the border.
inline std::vector<double> ddsa_grid_oracle(const Tensor& x, const DdsaParams& p) {
  const std::int64_t b = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), hw = H * W;
  const auto xv = x.to_vector();
  const auto q = pointwise(xv, b, C, hw, p.q);
  const auto kv = pointwise(xv, b, C, hw, p.kv);
  const std::int64_t d = C / p.heads;
  std::vector<double> pre(static_cast<std::size_t>(b * C * hw));
  for (std::int64_t n = 0; n < b; ++n)
    for (std::int64_t head = 0; head < p.heads; ++head)
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t xx = 0; xx < W; ++xx) {
          std::vector<double> score(static_cast<std::size_t>(p.points));
          std::vector<std::int64_t> pix(static_cast<std::size_t>(p.points));
          double mx = -INFINITY;
          for (int s = 0; s < p.points; ++s) {
            auto [dy, dx] = ddsa_reference_point(s, p.points);
            const auto yy = std::clamp<std::int64_t>(y + static_cast<std::int64_t>(dy), 0, H - 1);
            const auto xs = std::clamp<std::int64_t>(xx + static_cast<std::int64_t>(dx), 0, W - 1);
            pix[static_cast<std::size_t>(s)] = yy * W + xs;
            double sc = 0;
            for (std::int64_t e = 0; e < d; ++e) {
              const std::int64_t ch = head * d + e;
              sc += q[static_cast<std::size_t>((n * C + ch) * hw + y * W + xx)] *
                    kv[static_cast<std::size_t>((n * 2 * C + ch) * hw + yy * W + xs)];
            }
            sc /= std::sqrt(static_cast<double>(d));
            score[static_cast<std::size_t>(s)] = sc;
            mx = std::max(mx, sc);
          }
          double z = 0;
          for (auto& sc : score) z += (sc = std::exp(sc - mx));
          for (std::int64_t e = 0; e < d; ++e) {
            const std::int64_t ch = head * d + e;
            double acc = 0;
            for (int s = 0; s < p.points; ++s)
              acc += score[static_cast<std::size_t>(s)] / z *
                     kv[static_cast<std::size_t>((n * 2 * C + C + ch) * hw + pix[static_cast<std::size_t>(s)])];
            pre[static_cast<std::size_t>((n * C + ch) * hw + y * W + xx)] = acc;
          }
        }
  return pointwise(pre, b, C, hw, p.projection);
}


}  // namespace odisr::testing
