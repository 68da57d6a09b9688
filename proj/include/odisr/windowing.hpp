// SPDX-License-Identifier: Apache-2.0
//
// Rectangle-window partitioning and the dynamic relative position bias.
#pragma once

#include <cstdint>
#include <string>

#include "odisr/layers.hpp"
#include "odisr/tensor.hpp"

namespace odisr {

enum class Orientation { horizontal, vertical, square };

struct WindowSpec {
  std::int64_t rh = 1;
  std::int64_t rw = 1;

  Orientation orientation() const {
    return rh < rw ? Orientation::horizontal : rh > rw ? Orientation::vertical : Orientation::square;
  }
  std::int64_t tokens() const { return rh * rw; }
  /// ConfigError unless both extents are positive.
  void validate() const;
};

/// The first half of the heads attend in horizontal windows, the rest in
/// vertical ones.
struct HeadSplit {
  int total = 2;

  explicit HeadSplit(int heads);
  int per_group() const { return total / 2; }
  bool horizontal(int head) const { return head < total / 2; }
};

/// [b, c, h, w] -> [b * nw, rh * rw, c]; windows and tokens in row-major order.
/// DimensionError when h or w is not a multiple of the window (pad first).
Tensor partition(const Tensor& x, const WindowSpec& spec);

/// Inverse of partition for a batch of `height` x `width` maps.
Tensor merge(const Tensor& windows, const WindowSpec& spec, std::int64_t height,
             std::int64_t width);

/// Continuous relative-position MLP: (dy / rh, dx / rw) -> hidden ReLU -> heads.
struct RpeMlp {
  static constexpr std::int64_t kHidden = 32;
  Linear fc1;
  Linear fc2;

  RpeMlp() = default;
  RpeMlp(Philox& rng, std::int64_t heads, DType dtype);
  void collect(const std::string& prefix, ParameterSet& set) const;
};

/// [heads, T, T] bias with B[n, i, j] = MLP_n(offset(i, j)), T = rh * rw.
Tensor relative_position_bias(const WindowSpec& spec, std::int64_t heads, const RpeMlp& mlp);

}  // namespace odisr
