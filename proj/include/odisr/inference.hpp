// SPDX-License-Identifier: Apache-2.0
//
// Whole-image super-resolution with optional overlapping tiles.
#pragma once

#include <cstdint>

#include "odisr/image_io.hpp"
#include "odisr/model.hpp"

namespace odisr {

struct TileOptions {
  /// LR tile edge; 0 runs the whole image at once. Keep it a multiple of the
  /// window extents so tiles share the untiled window grid.
  std::int64_t tile = 0;
  /// LR context added on every side of a tile and cropped after the pass.
  std::int64_t overlap = 16;
};

/// lr [1, C, h, w] -> [1, C, h * s, w * s]. Each tile sees the distortion map
/// rows of its true latitude in the full image. No gradients are recorded.
Tensor super_resolve(const Model& model, const Tensor& lr, TileOptions opts = {});
Image8 super_resolve(const Model& model, const Image8& lr, TileOptions opts = {});

}  // namespace odisr
