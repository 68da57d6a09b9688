// SPDX-License-Identifier: Apache-2.0
#include "odisr/windowing.hpp"

#include "odisr/error.hpp"
#include "odisr/ops.hpp"

namespace odisr {

void WindowSpec::validate() const {
  if (rh < 1 || rw < 1)
    throw ConfigError("window extents must be positive, got " + std::to_string(rh) + " x " +
                      std::to_string(rw));
}

HeadSplit::HeadSplit(int heads) : total(heads) {
  if (heads < 2 || heads % 2 != 0)
    throw ConfigError("head count must be a positive even number, got " + std::to_string(heads));
}

Tensor partition(const Tensor& x, const WindowSpec& spec) {
  spec.validate();
  if (x.rank() != 4) throw DimensionError("partition expects [b, c, h, w], got " + to_string(x.shape()));
  const std::int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % spec.rh != 0 || w % spec.rw != 0)
    throw DimensionError("extent " + std::to_string(h) + " x " + std::to_string(w) +
                         " is not divisible by window " + std::to_string(spec.rh) + " x " +
                         std::to_string(spec.rw) + "; pad the input first");
  Tensor t = reshape(x, {b, c, h / spec.rh, spec.rh, w / spec.rw, spec.rw});
  t = permute(t, {0, 2, 4, 3, 5, 1});
  return reshape(t, {-1, spec.tokens(), c});
}

Tensor merge(const Tensor& windows, const WindowSpec& spec, std::int64_t height,
             std::int64_t width) {
  spec.validate();
  if (windows.rank() != 3 || height % spec.rh != 0 || width % spec.rw != 0 ||
      windows.dim(1) != spec.tokens())
    throw DimensionError("cannot merge windows " + to_string(windows.shape()) + " into " +
                         std::to_string(height) + " x " + std::to_string(width) + " with window " +
                         std::to_string(spec.rh) + " x " + std::to_string(spec.rw));
  const std::int64_t nw = (height / spec.rh) * (width / spec.rw);
  if (windows.dim(0) % nw != 0)
    throw DimensionError("window count " + std::to_string(windows.dim(0)) +
                         " is not a multiple of " + std::to_string(nw));
  const std::int64_t b = windows.dim(0) / nw, c = windows.dim(2);
  Tensor t = reshape(windows, {b, height / spec.rh, width / spec.rw, spec.rh, spec.rw, c});
  t = permute(t, {0, 5, 1, 3, 2, 4});
  return reshape(t, {b, c, height, width});
}

RpeMlp::RpeMlp(Philox& rng, std::int64_t heads, DType dtype)
    : fc1(rng, 2, kHidden, dtype), fc2(rng, kHidden, heads, dtype) {}

void RpeMlp::collect(const std::string& prefix, ParameterSet& set) const {
  fc1.collect(prefix + ".fc1", set);
  fc2.collect(prefix + ".fc2", set);
}

Tensor relative_position_bias(const WindowSpec& spec, std::int64_t heads, const RpeMlp& mlp) {
  spec.validate();
  if (mlp.fc2.weight.dim(1) != heads)
    throw DimensionError("position MLP emits " + std::to_string(mlp.fc2.weight.dim(1)) +
                         " heads, expected " + std::to_string(heads));
  const std::int64_t sy = 2 * spec.rh - 1, sx = 2 * spec.rw - 1;
  std::vector<double> offsets;
  offsets.reserve(static_cast<std::size_t>(2 * sy * sx));
  for (std::int64_t dy = -(spec.rh - 1); dy < spec.rh; ++dy)
    for (std::int64_t dx = -(spec.rw - 1); dx < spec.rw; ++dx) {
      offsets.push_back(static_cast<double>(dy) / static_cast<double>(spec.rh));
      offsets.push_back(static_cast<double>(dx) / static_cast<double>(spec.rw));
    }
  const DType dt = mlp.fc1.weight.dtype();
  Tensor table = mlp.fc2(relu(mlp.fc1(Tensor::from_values({sy * sx, 2}, offsets, dt))));
  table = permute(table, {1, 0});  // [heads, unique offsets]

  const std::int64_t T = spec.tokens();
  std::vector<std::int64_t> index;
  index.reserve(static_cast<std::size_t>(T * T));
  for (std::int64_t i = 0; i < T; ++i)
    for (std::int64_t j = 0; j < T; ++j) {
      const std::int64_t dy = i / spec.rw - j / spec.rw;
      const std::int64_t dx = i % spec.rw - j % spec.rw;
      index.push_back((dy + spec.rh - 1) * sx + (dx + spec.rw - 1));
    }
  return reshape(index_select(table, 1, index), {heads, T, T});
}

}  // namespace odisr
