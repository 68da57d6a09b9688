// SPDX-License-Identifier: Apache-2.0
#include "odisr/dfa.hpp"

#include "odisr/error.hpp"
#include "odisr/ops.hpp"

namespace odisr {

DfaParams::DfaParams(Philox& rng, std::int64_t channels, std::int64_t reduction, DType dtype,
                     bool diff)
    : use_diff(diff) {
  if (reduction < 1 || channels % reduction != 0)
    throw ConfigError("reduction ratio " + std::to_string(reduction) + " does not divide " +
                      std::to_string(channels) + " channels");
  const std::int64_t mid = channels / reduction;
  reduce = Conv(rng, channels, mid, 1, dtype);
  expand_m = Conv(rng, mid, channels, 1, dtype);
  expand_n = Conv(rng, mid, channels, 1, dtype);
}

void DfaParams::collect(const std::string& prefix, ParameterSet& set) const {
  reduce.collect(prefix + ".reduce", set);
  expand_m.collect(prefix + ".expand_m", set);
  expand_n.collect(prefix + ".expand_n", set);
}

Tensor dfa(const Tensor& f1, const Tensor& f2, const DfaParams& p, DfaTrace* trace) {
  if (f1.shape() != f2.shape() || f1.rank() != 4)
    throw DimensionError("dfa inputs differ: " + to_string(f1.shape()) + " vs " +
                         to_string(f2.shape()));
  Tensor diff = sub(f1, f2);
  Tensor total = add(f1, f2);
  Tensor pooled = mean(total, {2, 3}, true);
  if (p.use_diff) pooled = mul(mean(diff, {2, 3}, true), pooled);
  Tensor z = relu(p.reduce(pooled));
  // softmax(M, N)[0] - 1/2 = tanh((M - N) / 2) / 2
  Tensor alpha = mul_scalar(tanh(mul_scalar(sub(p.expand_m(z), p.expand_n(z)), 0.5)), 0.5);
  if (trace) {
    trace->weight_first = add_scalar(alpha, 0.5);
    trace->weight_second = mul_scalar(add_scalar(alpha, -0.5), -1.0);
  }
  return add(mul_scalar(total, 0.5), mul(alpha, diff));
}

}  // namespace odisr
