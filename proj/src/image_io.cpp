// SPDX-License-Identifier: Apache-2.0
#include "odisr/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstring>

#include "odisr/error.hpp"

namespace odisr {

namespace {

// RAII wrapper over libpng's simplified API handle.
struct PngImage {
  png_image img;
  PngImage() {
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&img); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

void begin_read(PngImage& png, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  if (!png_image_begin_read_from_file(&png.img, path.c_str()))
    throw FormatError("cannot decode PNG " + path.string() + ": " + png.img.message);
}

void finish_read(PngImage& png, const std::filesystem::path& path, void* buffer) {
  if (!png_image_finish_read(&png.img, nullptr, buffer, 0, nullptr))
    throw FormatError("cannot decode PNG " + path.string() + ": " + png.img.message);
}

void write(PngImage& png, const std::filesystem::path& path, const void* buffer) {
  if (!png_image_write_to_file(&png.img, path.c_str(), 0, buffer, 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + png.img.message);
}

}  // namespace

Image8 read_png(const std::filesystem::path& path) {
  PngImage png;
  begin_read(png, path);
  png.img.format = PNG_FORMAT_RGB;
  Image8 out;
  out.height = png.img.height;
  out.width = png.img.width;
  out.pixels.resize(PNG_IMAGE_SIZE(png.img));
  finish_read(png, path, out.pixels.data());
  return out;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  if (image.pixels.size() != static_cast<std::size_t>(image.height * image.width * 3))
    throw DimensionError("RGB pixel buffer does not match its extents");
  PngImage png;
  png.img.width = static_cast<png_uint_32>(image.width);
  png.img.height = static_cast<png_uint_32>(image.height);
  png.img.format = PNG_FORMAT_RGB;
  write(png, path, image.pixels.data());
}

void write_png16(const std::filesystem::path& path, const Image16& image) {
  if (image.pixels.size() != static_cast<std::size_t>(image.height * image.width))
    throw DimensionError("16-bit pixel buffer does not match its extents");
  PngImage png;
  png.img.width = static_cast<png_uint_32>(image.width);
  png.img.height = static_cast<png_uint_32>(image.height);
  png.img.format = PNG_FORMAT_LINEAR_Y;
  write(png, path, image.pixels.data());
}

Image16 read_png16(const std::filesystem::path& path) {
  PngImage png;
  begin_read(png, path);
  png.img.format = PNG_FORMAT_LINEAR_Y;
  Image16 out;
  out.height = png.img.height;
  out.width = png.img.width;
  out.pixels.resize(static_cast<std::size_t>(out.height * out.width));
  finish_read(png, path, out.pixels.data());
  return out;
}

Tensor image_to_tensor(const Image8& image, DType dtype) {
  const std::int64_t h = image.height, w = image.width;
  std::vector<double> v(static_cast<std::size_t>(3 * h * w));
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < h * w; ++i)
      v[static_cast<std::size_t>(c * h * w + i)] = image.pixels[static_cast<std::size_t>(i * 3 + c)] / 255.0;
  return Tensor::from_values({1, 3, h, w}, v, dtype);
}

Image8 tensor_to_image(const Tensor& t) {
  const bool batched = t.rank() == 4;
  if (!(t.rank() == 3 || (batched && t.dim(0) == 1)) || t.dim(-3) != 3)
    throw DimensionError("expected an RGB tensor [1, 3, H, W], got " + to_string(t.shape()));
  Image8 out;
  out.height = t.dim(-2);
  out.width = t.dim(-1);
  const std::int64_t hw = out.height * out.width;
  out.pixels.resize(static_cast<std::size_t>(3 * hw));
  const auto v = t.to_vector();
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < hw; ++i) {
      double x = v[static_cast<std::size_t>(c * hw + i)];
      if (!std::isfinite(x)) x = 0.0;
      x = std::clamp(x, 0.0, 1.0);
      out.pixels[static_cast<std::size_t>(i * 3 + c)] = static_cast<std::uint8_t>(std::lround(x * 255.0));
    }
  return out;
}

}  // namespace odisr
