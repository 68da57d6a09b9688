// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "odisr/tensor.hpp"

namespace odisr::detail {

template <typename T>
const T* cptr(const Tensor& t) {
  return t.data<T>().data();
}

/// Gradient storage of an op input, allocated on first use.
template <typename T>
T* gptr(const Tensor& t) {
  return t.impl().ensure_grad().template view<T>().data();
}

template <typename T>
const T* self_grad(const TensorImpl& self) {
  return self.grad->template view<T>().data();
}

inline void check_dtypes(const char* op, const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype())
    throw Error(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                dtype_name(b.dtype()));
}

inline int normalize_axis(int axis, int rank, const char* op) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank)
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(rank));
  return a;
}

/// outer x extent x inner decomposition of a shape around one axis.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= static_cast<std::size_t>(s[i]);
  r.extent = static_cast<std::size_t>(s[axis]);
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= static_cast<std::size_t>(s[i]);
  return r;
}

}  // namespace odisr::detail
