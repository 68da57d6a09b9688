// SPDX-License-Identifier: Apache-2.0
//
// Distortion guidance generator: turns the distortion map into a per-channel,
// latitude-constant guidance field.
#pragma once

#include <string>

#include "odisr/erp.hpp"
#include "odisr/layers.hpp"

namespace odisr {

/// Row mean: [b, C, H, W] -> [b, C, H, 1].
Tensor lwp(const Tensor& f);
/// Row replication: [b, C, H, 1] -> [b, C, H, width].
Tensor lwe(const Tensor& v, std::int64_t width);

struct DggParams {
  Conv expand;     // 1 -> C, 3x3, replicate padding
  Conv latitude;   // C -> C, 1x1 on the pooled column
  Conv gate;       // C -> C, 1x1 on the global average
  Tensor depthwise;       // [C, 1, 3, 3]
  Tensor depthwise_bias;  // [C]
  Tensor pointwise;       // [C, C, 1, 1]
  Tensor pointwise_bias;  // [C]

  DggParams() = default;
  DggParams(Philox& rng, std::int64_t channels, DType dtype);
  std::int64_t channels() const { return expand.weight.dim(0); }
  void collect(const std::string& prefix, ParameterSet& set) const;
};

/// sigmoid(conv1x1(GAP(f))) as [b, C, 1, 1].
Tensor attention_branch(const Tensor& f, const DggParams& p);

/// D as [b, 1, H, W] -> guidance [b, C, H, W]. Every output channel is
/// constant along each row.
Tensor dgg_forward(const Tensor& distortion, const DggParams& p);
Tensor dgg_forward(const DistortionMap& map, const DggParams& p);

}  // namespace odisr
