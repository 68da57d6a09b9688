// SPDX-License-Identifier: Apache-2.0
//
// Named parameter storage and the small parameterized layers the network is
// built from.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "odisr/ops.hpp"
#include "odisr/rng.hpp"
#include "odisr/tensor.hpp"

namespace odisr {

/// Ordered name -> tensor registry. Names are unique.
class ParameterSet {
 public:
  /// Registers `t` (marked requires_grad) under `name`; ConfigError on duplicates.
  void add(const std::string& name, Tensor t);
  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::string> names() const;
  std::vector<Tensor> tensors() const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

Tensor init_trunc_normal(Philox& rng, Shape shape, double sigma, DType dtype);
Tensor init_uniform(Philox& rng, Shape shape, double bound, DType dtype);

/// y = x W + b over the last axis; W is [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  /// Truncated normal (sigma 0.02) weights, zero bias; `zero` zeroes the weights too.
  Linear(Philox& rng, std::int64_t in, std::int64_t out, DType dtype, bool zero = false);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParameterSet& set) const;
};

/// Dense 2-D convolution with bias, weights uniform in +-1/sqrt(fan_in).
struct Conv {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]
  PadMode mode = PadMode::zero;

  Conv() = default;
  Conv(Philox& rng, std::int64_t in, std::int64_t out, int kernel, DType dtype,
       PadMode mode = PadMode::zero);
  /// 1x1 projection with truncated normal (sigma 0.02) weights and zero bias.
  static Conv projection(Philox& rng, std::int64_t in, std::int64_t out, DType dtype);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParameterSet& set) const;
  void zero();
};

/// Layer norm over the channel axis of a [b, c, h, w] map.
struct ChannelNorm {
  Tensor gamma;
  Tensor beta;

  ChannelNorm() = default;
  ChannelNorm(std::int64_t channels, DType dtype);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParameterSet& set) const;
};

}  // namespace odisr
