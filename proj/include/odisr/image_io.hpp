// SPDX-License-Identifier: Apache-2.0
// PNG reading and writing.
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "odisr/tensor.hpp"

namespace odisr {

/// 8-bit interleaved RGB image.
struct Image8 {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3
};

/// 16-bit single-channel image.
struct Image16 {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint16_t> pixels;
};

/// Reads any PNG and converts it to 8-bit RGB. Throws IoError / FormatError.
Image8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image);

void write_png16(const std::filesystem::path& path, const Image16& image);
Image16 read_png16(const std::filesystem::path& path);

/// [1, 3, H, W] with values in [0, 1].
Tensor image_to_tensor(const Image8& image, DType dtype = DType::f32);
/// Accepts [3, H, W] or [1, 3, H, W]; clamps to [0, 1] and rounds.
Image8 tensor_to_image(const Tensor& t);

}  // namespace odisr
