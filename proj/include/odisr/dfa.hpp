// SPDX-License-Identifier: Apache-2.0
//
// Dynamic feature aggregation: per-channel two-way softmax fusion of two
// feature maps, driven by their difference and sum.
#pragma once

#include <string>

#include "odisr/layers.hpp"

namespace odisr {

struct DfaParams {
  Conv reduce;    // C -> C / r, 1x1
  Conv expand_m;  // C / r -> C, 1x1
  Conv expand_n;  // C / r -> C, 1x1
  bool use_diff = true;

  DfaParams() = default;
  DfaParams(Philox& rng, std::int64_t channels, std::int64_t reduction, DType dtype,
            bool use_diff = true);
  void collect(const std::string& prefix, ParameterSet& set) const;
};

struct DfaTrace {
  Tensor weight_first;   // M^s, [b, C, 1, 1]
  Tensor weight_second;  // N^s = 1 - M^s
};

/// M^s * f1 + N^s * f2 with (M^s, N^s) = softmax(M, N) per channel, where
/// M and N come from GAP(f1 - f2) * GAP(f1 + f2) (GAP(f1 + f2) alone without
/// the difference branch). Evaluated as (f1 + f2) / 2 + (M^s - 1/2)(f1 - f2),
/// so equal inputs and tied weights are reproduced exactly.
Tensor dfa(const Tensor& f1, const Tensor& f2, const DfaParams& p, DfaTrace* trace = nullptr);

}  // namespace odisr
