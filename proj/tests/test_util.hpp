// SPDX-License-Identifier: Apache-2.0
// Shared helpers for the unit tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "odisr/rng.hpp"
#include "odisr/tensor.hpp"

namespace odisr::testing {

inline Tensor random_tensor(Philox& rng, Shape shape, DType dtype = DType::f64,
                            double lo = -1.0, double hi = 1.0, bool grad = false) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  Tensor t = Tensor::from_values(std::move(shape), v, dtype);
  t.set_requires_grad(grad);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  auto va = a.to_vector();
  auto vb = b.to_vector();
  if (va.size() != vb.size()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < va.size(); ++i) m = std::max(m, std::abs(va[i] - vb[i]));
  return m;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && a.to_vector() == b.to_vector();
}

}  // namespace odisr::testing
