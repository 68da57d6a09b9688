// SPDX-License-Identifier: Apache-2.0
//
// Rectangle-window self-attention (optionally modulated by distortion
// guidance) and deformable, distortion-aware self-attention.
#pragma once

#include <string>

#include "odisr/layers.hpp"
#include "odisr/windowing.hpp"

namespace odisr {

struct RwinParams {
  int heads = 2;
  WindowSpec horizontal{4, 16};
  WindowSpec vertical{16, 4};
  Conv qkv;            // C -> 3C, 1x1
  Conv projection;     // W^f, C -> C, 1x1, zero-initialized
  RpeMlp rpe_horizontal;
  RpeMlp rpe_vertical;

  RwinParams() = default;
  RwinParams(Philox& rng, std::int64_t channels, int heads, WindowSpec horizontal,
             WindowSpec vertical, DType dtype);
  std::int64_t channels() const { return projection.weight.dim(0); }
  void collect(const std::string& prefix, ParameterSet& set) const;
};

/// Intermediate values of one rectangle-window attention pass.
struct RwinTrace {
  Tensor attention_horizontal;  // [b * nw, heads / 2, T, T]
  Tensor attention_vertical;
  Tensor pre_projection;        // concatenated head outputs, [b, C, h, w]
};

/// Heads [0, N/2) attend inside horizontal windows, [N/2, N) inside vertical
/// ones; outputs are concatenated in that order and projected by W^f.
Tensor rwin_sa(const Tensor& x, const RwinParams& p, RwinTrace* trace = nullptr);

/// rwin_sa with keys and values multiplied element-wise by the guidance
/// `g` [b or 1, C, h, w] before windowing.
Tensor dmrsa(const Tensor& x, const Tensor& g, const RwinParams& p, RwinTrace* trace = nullptr);

struct DdsaParams {
  int heads = 2;
  int points = 9;        // P, a perfect square laid out as a unit-spaced grid
  double radius = 8.0;   // rho, offset bound in pixels
  Conv offset1;          // C + 1 -> C, 3x3
  Conv offset2;          // C -> 2P, 3x3
  Conv q;                // C -> C, 1x1
  Conv kv;               // C -> 2C, 1x1
  Conv projection;       // C -> C, 1x1, zero-initialized

  DdsaParams() = default;
  DdsaParams(Philox& rng, std::int64_t channels, int heads, int points, double radius,
             DType dtype);
  std::int64_t channels() const { return projection.weight.dim(0); }
  void collect(const std::string& prefix, ParameterSet& set) const;
};

struct DdsaTrace {
  Tensor offsets;    // [b, 2P, h, w]; channel 2p is the row offset, 2p + 1 the column offset
  Tensor attention;  // [b, heads, 1, h * w, P]
};

/// (row, col) displacement of reference point p from its query pixel.
std::pair<double, double> ddsa_reference_point(int p, int points);

/// Attention of every query over P keys/values sampled bilinearly at
/// query + reference + tanh(offset_net(concat(x, D))) * rho.
Tensor ddsa(const Tensor& x, const Tensor& distortion, const DdsaParams& p,
            DdsaTrace* trace = nullptr);

}  // namespace odisr
