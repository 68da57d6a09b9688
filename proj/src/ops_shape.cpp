// SPDX-License-Identifier: Apache-2.0
#include <numeric>

#include "odisr/ops.hpp"
#include "op_util.hpp"

namespace odisr {

using detail::cptr;
using detail::gptr;
using detail::self_grad;

namespace {

/// Shared helper for ops whose output element i copies input element
/// map[i]; backward scatters through the same map.
Tensor gather_flat(const Tensor& x, Shape shape, std::shared_ptr<const std::vector<std::size_t>> map) {
  Buffer out(x.dtype(), map->size());
  dispatch(x.dtype(), [&]<typename T>() {
    const T* px = cptr<T>(x);
    T* po = out.view<T>().data();
    const auto& m = *map;
    for (std::size_t i = 0; i < m.size(); ++i) po[i] = px[m[i]];
  });
  return make_result(std::move(shape), std::move(out), {x}, [x, map](TensorImpl& self) {
    dispatch(self.data.dtype(), [&]<typename T>() {
      const T* g = self_grad<T>(self);
      T* gx = gptr<T>(x);
      const auto& m = *map;
      for (std::size_t i = 0; i < m.size(); ++i) gx[m[i]] += g[i];
    });
  });
}

}  // namespace

Tensor reshape(const Tensor& x, Shape shape) {
  std::int64_t infer = -1;
  std::size_t known = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw DimensionError("reshape: more than one inferred extent");
      infer = static_cast<std::int64_t>(i);
    } else {
      known *= static_cast<std::size_t>(shape[i]);
    }
  }
  if (infer >= 0 && known > 0) shape[infer] = static_cast<std::int64_t>(x.numel() / known);
  if (numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " +
                         to_string(shape));
  return make_result(std::move(shape), x.impl().data, {x}, [x](TensorImpl& self) {
    x.impl().ensure_grad().accumulate(*self.grad);
  });
}

Tensor permute(const Tensor& x, const std::vector<int>& order) {
  const int r = x.rank();
  if (static_cast<int>(order.size()) != r)
    throw DimensionError("permute: order has " + std::to_string(order.size()) +
                         " axes for shape " + to_string(x.shape()));
  std::vector<bool> used(r, false);
  for (int a : order) {
    if (a < 0 || a >= r || used[a]) throw DimensionError("permute: invalid axis order");
    used[a] = true;
  }
  std::vector<std::size_t> in_stride(r, 1);
  for (int i = r - 2; i >= 0; --i) in_stride[i] = in_stride[i + 1] * x.shape()[i + 1];
  Shape shape(r);
  std::vector<std::size_t> stride(r);
  for (int i = 0; i < r; ++i) {
    shape[i] = x.shape()[order[i]];
    stride[i] = in_stride[order[i]];
  }
  auto map = std::make_shared<std::vector<std::size_t>>(x.numel());
  if (!map->empty()) {
    std::vector<std::int64_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < map->size(); ++i) {
      (*map)[i] = off;
      for (int d = r - 1; d >= 0; --d) {
        ++idx[d];
        off += stride[d];
        if (idx[d] < shape[d]) break;
        off -= stride[d] * static_cast<std::size_t>(idx[d]);
        idx[d] = 0;
      }
    }
  }
  return gather_flat(x, std::move(shape), std::move(map));
}

Tensor narrow(const Tensor& x, int axis, std::int64_t start, std::int64_t length) {
  const int ax = detail::normalize_axis(axis, x.rank(), "narrow");
  if (start < 0 || length < 0 || start + length > x.shape()[ax])
    throw DimensionError("narrow: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") exceeds axis " +
                         std::to_string(axis) + " of " + to_string(x.shape()));
  const auto sp = detail::split_axis(x.shape(), ax);
  Shape shape = x.shape();
  shape[ax] = length;
  const std::size_t len = static_cast<std::size_t>(length), st = static_cast<std::size_t>(start);
  Buffer out(x.dtype(), sp.outer * len * sp.inner);
  dispatch(x.dtype(), [&]<typename T>() {
    const T* px = cptr<T>(x);
    T* po = out.view<T>().data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(px + (o * sp.extent + st) * sp.inner, len * sp.inner,
                  po + o * len * sp.inner);
  });
  return make_result(std::move(shape), std::move(out), {x},
                     [x, sp, len, st](TensorImpl& self) {
                       dispatch(self.data.dtype(), [&]<typename T>() {
                         const T* g = self_grad<T>(self);
                         T* gx = gptr<T>(x);
                         for (std::size_t o = 0; o < sp.outer; ++o) {
                           T* dst = gx + (o * sp.extent + st) * sp.inner;
                           const T* src = g + o * len * sp.inner;
                           for (std::size_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
                         }
                       });
                     });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Tensor& first = parts.front();
  const int ax = detail::normalize_axis(axis, first.rank(), "concat");
  Shape shape = first.shape();
  shape[ax] = 0;
  for (const auto& p : parts) {
    detail::check_dtypes("concat", first, p);
    if (p.rank() != first.rank())
      throw DimensionError("concat: rank mismatch " + to_string(first.shape()) + " vs " +
                           to_string(p.shape()));
    for (int d = 0; d < first.rank(); ++d)
      if (d != ax && p.shape()[d] != first.shape()[d])
        throw DimensionError("concat: shapes " + to_string(first.shape()) + " and " +
                             to_string(p.shape()) + " differ off axis " +
                             std::to_string(axis));
    shape[ax] += p.shape()[ax];
  }
  const auto sp = detail::split_axis(shape, ax);
  Buffer out(first.dtype(), numel(shape));
  dispatch(first.dtype(), [&]<typename T>() {
    T* po = out.view<T>().data();
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t ext = static_cast<std::size_t>(p.shape()[ax]);
      const T* pp = cptr<T>(p);
      for (std::size_t o = 0; o < sp.outer; ++o)
        std::copy_n(pp + o * ext * sp.inner, ext * sp.inner,
                    po + (o * sp.extent + offset) * sp.inner);
      offset += ext;
    }
  });
  return make_result(std::move(shape), std::move(out), parts,
                     [parts, sp, ax](TensorImpl& self) {
                       dispatch(self.data.dtype(), [&]<typename T>() {
                         const T* g = self_grad<T>(self);
                         std::size_t offset = 0;
                         for (const auto& p : parts) {
                           const std::size_t ext = static_cast<std::size_t>(p.shape()[ax]);
                           if (p.requires_grad()) {
                             T* gp = gptr<T>(p);
                             for (std::size_t o = 0; o < sp.outer; ++o) {
                               const T* src = g + (o * sp.extent + offset) * sp.inner;
                               T* dst = gp + o * ext * sp.inner;
                               for (std::size_t i = 0; i < ext * sp.inner; ++i) dst[i] += src[i];
                             }
                           }
                           offset += ext;
                         }
                       });
                     });
}

Tensor expand(const Tensor& x, const Shape& shape) {
  const std::size_t r = shape.size();
  if (static_cast<std::size_t>(x.rank()) > r)
    throw DimensionError("expand: cannot expand " + to_string(x.shape()) + " to " +
                         to_string(shape));
  std::vector<std::size_t> stride(r, 0);
  std::size_t s = 1;
  for (std::size_t i = r; i-- > 0;) {
    const std::size_t xi = i + x.rank() - r;
    const bool has = i + x.rank() >= r;
    const std::int64_t d = has ? x.shape()[xi] : 1;
    if (d != shape[i] && d != 1)
      throw DimensionError("expand: cannot expand " + to_string(x.shape()) + " to " +
                           to_string(shape));
    stride[i] = (d == 1) ? 0 : s;
    s *= static_cast<std::size_t>(d);
  }
  auto map = std::make_shared<std::vector<std::size_t>>(numel(shape));
  if (!map->empty()) {
    std::vector<std::int64_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < map->size(); ++i) {
      (*map)[i] = off;
      for (std::size_t d = r; d-- > 0;) {
        ++idx[d];
        off += stride[d];
        if (idx[d] < shape[d]) break;
        off -= stride[d] * static_cast<std::size_t>(idx[d]);
        idx[d] = 0;
      }
    }
  }
  return gather_flat(x, shape, std::move(map));
}

Tensor index_select(const Tensor& x, int axis, const std::vector<std::int64_t>& indices) {
  const int ax = detail::normalize_axis(axis, x.rank(), "index_select");
  const auto sp = detail::split_axis(x.shape(), ax);
  for (auto i : indices)
    if (i < 0 || i >= x.shape()[ax])
      throw DimensionError("index_select: index " + std::to_string(i) + " out of range for " +
                           to_string(x.shape()));
  Shape shape = x.shape();
  shape[ax] = static_cast<std::int64_t>(indices.size());
  auto map = std::make_shared<std::vector<std::size_t>>();
  map->reserve(numel(shape));
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (auto i : indices)
      for (std::size_t k = 0; k < sp.inner; ++k)
        map->push_back((o * sp.extent + static_cast<std::size_t>(i)) * sp.inner + k);
  return gather_flat(x, std::move(shape), std::move(map));
}

Tensor pad_reflect(const Tensor& x, int top, int bottom, int left, int right) {
  if (x.rank() != 4) throw DimensionError("pad_reflect: expected 4-D input, got " + to_string(x.shape()));
  const auto h = x.shape()[2], w = x.shape()[3];
  if (top < 0 || bottom < 0 || left < 0 || right < 0 || top >= h || bottom >= h ||
      left >= w || right >= w)
    throw DimensionError("pad_reflect: padding must be non-negative and smaller than the extent " +
                         to_string(x.shape()));
  if (top == 0 && bottom == 0 && left == 0 && right == 0) return x;
  auto reflect = [](std::int64_t i, std::int64_t n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * (n - 1) - i;
    return i;
  };
  const std::int64_t ho = h + top + bottom, wo = w + left + right;
  const std::size_t planes = static_cast<std::size_t>(x.shape()[0] * x.shape()[1]);
  auto map = std::make_shared<std::vector<std::size_t>>(planes * ho * wo);
  std::size_t k = 0;
  for (std::size_t p = 0; p < planes; ++p)
    for (std::int64_t i = 0; i < ho; ++i) {
      const std::int64_t si = reflect(i - top, h);
      for (std::int64_t j = 0; j < wo; ++j)
        (*map)[k++] = p * h * w + si * w + reflect(j - left, w);
    }
  return gather_flat(x, {x.shape()[0], x.shape()[1], ho, wo}, std::move(map));
}

}  // namespace odisr
