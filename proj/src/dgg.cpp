// SPDX-License-Identifier: Apache-2.0
#include "odisr/dgg.hpp"

#include <cmath>

#include "odisr/error.hpp"
#include "odisr/ops.hpp"

namespace odisr {

Tensor lwp(const Tensor& f) {
  if (f.rank() != 4) throw DimensionError("lwp expects [b, C, H, W], got " + to_string(f.shape()));
  // Mean of the deviations from the first column: exact on constant rows.
  Tensor first = narrow(f, 3, 0, 1);
  return add(first, mean(sub(f, first), {3}, true));
}

Tensor lwe(const Tensor& v, std::int64_t width) {
  if (v.rank() != 4 || v.dim(3) != 1)
    throw DimensionError("lwe expects [b, C, H, 1], got " + to_string(v.shape()));
  if (width < 1) throw DimensionError("lwe width must be positive");
  return expand(v, {v.dim(0), v.dim(1), v.dim(2), width});
}

DggParams::DggParams(Philox& rng, std::int64_t c, DType dtype)
    : expand(rng, 1, c, 3, dtype, PadMode::replicate),
      latitude(rng, c, c, 1, dtype),
      gate(rng, c, c, 1, dtype) {
  const double dw_bound = 1.0 / 3.0;
  depthwise = init_uniform(rng, {c, 1, 3, 3}, dw_bound, dtype);
  depthwise_bias = init_uniform(rng, {c}, dw_bound, dtype);
  const double pw_bound = 1.0 / std::sqrt(static_cast<double>(c));
  pointwise = init_uniform(rng, {c, c, 1, 1}, pw_bound, dtype);
  pointwise_bias = init_uniform(rng, {c}, pw_bound, dtype);
}

void DggParams::collect(const std::string& prefix, ParameterSet& set) const {
  expand.collect(prefix + ".expand", set);
  latitude.collect(prefix + ".latitude", set);
  gate.collect(prefix + ".gate", set);
  set.add(prefix + ".refine.depthwise.weight", depthwise);
  set.add(prefix + ".refine.depthwise.bias", depthwise_bias);
  set.add(prefix + ".refine.pointwise.weight", pointwise);
  set.add(prefix + ".refine.pointwise.bias", pointwise_bias);
}

Tensor attention_branch(const Tensor& f, const DggParams& p) {
  return sigmoid(p.gate(mean(f, {2, 3}, true)));
}

Tensor dgg_forward(const Tensor& distortion, const DggParams& p) {
  if (distortion.rank() != 4 || distortion.dim(1) != 1)
    throw DimensionError("distortion input must be [b, 1, H, W], got " +
                         to_string(distortion.shape()));
  Tensor f = relu(p.expand(distortion));
  Tensor g = lwe(relu(p.latitude(lwp(f))), f.dim(3));
  Tensor gated = mul(g, attention_branch(f, p));
  return depthwise_separable_conv(gated, p.depthwise, p.pointwise, p.depthwise_bias,
                                  p.pointwise_bias, PadMode::replicate);
}

Tensor dgg_forward(const DistortionMap& map, const DggParams& p) {
  return dgg_forward(map.tensor(p.expand.weight.dtype()), p);
}

}  // namespace odisr
