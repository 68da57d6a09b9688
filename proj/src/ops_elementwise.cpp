// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numbers>

#include "odisr/ops.hpp"
#include "op_util.hpp"

namespace odisr {

using detail::check_dtypes;
using detail::cptr;
using detail::gptr;
using detail::self_grad;

namespace {

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> sa, sb;
  std::size_t na = 0, nb = 0, n = 0;
  bool same = false;
  bool b_suffix = false;  // b's flat index is out index modulo nb
  bool a_suffix = false;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan p;
  const std::size_t r = std::max(a.size(), b.size());
  p.out.assign(r, 1);
  p.sa.assign(r, 0);
  p.sb.assign(r, 0);
  for (std::size_t i = 0; i < r; ++i) {
    std::int64_t da = i + a.size() >= r ? a[i + a.size() - r] : 1;
    std::int64_t db = i + b.size() >= r ? b[i + b.size() - r] : 1;
    if (da != db && da != 1 && db != 1)
      throw DimensionError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " +
                           to_string(b));
    p.out[i] = std::max(da, db);
  }
  std::size_t stride_a = 1, stride_b = 1;
  for (std::size_t i = r; i-- > 0;) {
    std::int64_t da = i + a.size() >= r ? a[i + a.size() - r] : 1;
    std::int64_t db = i + b.size() >= r ? b[i + b.size() - r] : 1;
    p.sa[i] = (da == 1 && p.out[i] != 1) ? 0 : stride_a;
    p.sb[i] = (db == 1 && p.out[i] != 1) ? 0 : stride_b;
    stride_a *= static_cast<std::size_t>(da);
    stride_b *= static_cast<std::size_t>(db);
  }
  p.na = numel(a);
  p.nb = numel(b);
  p.n = numel(p.out);
  p.same = (p.na == p.n && p.nb == p.n);
  auto is_suffix = [&](const Shape& s) {
    // Leading broadcast dims only: after dropping leading 1s, s matches the
    // tail of out exactly.
    std::size_t k = 0;
    while (k < s.size() && s[k] == 1) ++k;
    std::size_t len = s.size() - k;
    if (len > r) return false;
    for (std::size_t i = 0; i < len; ++i)
      if (s[k + i] != p.out[r - len + i]) return false;
    return true;
  };
  p.b_suffix = !p.same && is_suffix(b);
  p.a_suffix = !p.same && is_suffix(a);
  return p;
}

/// Calls f(io, ia, ib) for every output element.
template <typename F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  if (p.same) {
    for (std::size_t i = 0; i < p.n; ++i) f(i, i, i);
    return;
  }
  if (p.b_suffix && p.na == p.n) {
    for (std::size_t i = 0; i < p.n; ++i) f(i, i, p.nb ? i % p.nb : 0);
    return;
  }
  if (p.a_suffix && p.nb == p.n) {
    for (std::size_t i = 0; i < p.n; ++i) f(i, p.na ? i % p.na : 0, i);
    return;
  }
  const std::size_t r = p.out.size();
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  const std::size_t last = static_cast<std::size_t>(p.out[r - 1]);
  const std::size_t la = p.sa[r - 1], lb = p.sb[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t io = 0, ia = 0, ib = 0;
  const std::size_t rows = p.n / std::max<std::size_t>(last, 1);
  for (std::size_t row = 0; row < rows; ++row) {
    for (std::size_t j = 0; j < last; ++j) f(io + j, ia + j * la, ib + j * lb);
    io += last;
    // advance odometer over dims [0, r-1)
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      ia += p.sa[d];
      ib += p.sb[d];
      if (idx[d] < static_cast<std::size_t>(p.out[d])) break;
      ia -= p.sa[d] * idx[d];
      ib -= p.sb[d] * idx[d];
      idx[d] = 0;
    }
  }
}

enum class BinOp { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  check_dtypes(name, a, b);
  auto plan = plan_broadcast(a.shape(), b.shape(), name);
  Buffer out(a.dtype(), plan.n);
  dispatch(a.dtype(), [&]<typename T>() {
    const T* pa = cptr<T>(a);
    const T* pb = cptr<T>(b);
    T* po = out.view<T>().data();
    switch (op) {
      case BinOp::add:
        for_each_broadcast(plan, [&](std::size_t io, std::size_t ia, std::size_t ib) {
          po[io] = pa[ia] + pb[ib];
        });
        break;
      case BinOp::sub:
        for_each_broadcast(plan, [&](std::size_t io, std::size_t ia, std::size_t ib) {
          po[io] = pa[ia] - pb[ib];
        });
        break;
      case BinOp::mul:
        for_each_broadcast(plan, [&](std::size_t io, std::size_t ia, std::size_t ib) {
          po[io] = pa[ia] * pb[ib];
        });
        break;
    }
  });
  Shape shape = plan.out;
  return make_result(std::move(shape), std::move(out), {a, b},
                     [a, b, plan, op](TensorImpl& self) {
                       dispatch(self.data.dtype(), [&]<typename T>() {
                         const T* g = self_grad<T>(self);
                         if (a.requires_grad()) {
                           T* ga = gptr<T>(a);
                           if (op == BinOp::mul) {
                             const T* pb = cptr<T>(b);
                             for_each_broadcast(plan, [&](std::size_t io, std::size_t ia,
                                                          std::size_t ib) {
                               ga[ia] += g[io] * pb[ib];
                             });
                           } else {
                             for_each_broadcast(plan,
                                                [&](std::size_t io, std::size_t ia, std::size_t) {
                                                  ga[ia] += g[io];
                                                });
                           }
                         }
                         if (b.requires_grad()) {
                           T* gb = gptr<T>(b);
                           if (op == BinOp::mul) {
                             const T* pa = cptr<T>(a);
                             for_each_broadcast(plan, [&](std::size_t io, std::size_t ia,
                                                          std::size_t ib) {
                               gb[ib] += g[io] * pa[ia];
                             });
                           } else if (op == BinOp::add) {
                             for_each_broadcast(plan,
                                                [&](std::size_t io, std::size_t, std::size_t ib) {
                                                  gb[ib] += g[io];
                                                });
                           } else {
                             for_each_broadcast(plan,
                                                [&](std::size_t io, std::size_t, std::size_t ib) {
                                                  gb[ib] -= g[io];
                                                });
                           }
                         }
                       });
                     });
}

/// Element-wise map with derivative expressed through input x and output y.
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  Buffer out(x.dtype(), x.numel());
  dispatch(x.dtype(), [&]<typename T>() {
    const T* px = cptr<T>(x);
    T* py = out.view<T>().data();
    for (std::size_t i = 0; i < x.numel(); ++i) py[i] = static_cast<T>(fwd(px[i]));
  });
  Shape shape = x.shape();
  return make_result(std::move(shape), std::move(out), {x}, [x, deriv](TensorImpl& self) {
    dispatch(self.data.dtype(), [&]<typename T>() {
      const T* g = self_grad<T>(self);
      const T* px = cptr<T>(x);
      const T* py = self.data.view<T>().data();
      T* gx = gptr<T>(x);
      for (std::size_t i = 0; i < x.numel(); ++i)
        gx[i] += g[i] * static_cast<T>(deriv(px[i], py[i]));
    });
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::mul, "mul"); }

Tensor add_scalar(const Tensor& a, double s) {
  return unary(
      a, [s](auto v) { return v + static_cast<decltype(v)>(s); },
      [](auto, auto) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary(
      a, [s](auto v) { return v * static_cast<decltype(v)>(s); },
      [s](auto v, auto) { return static_cast<decltype(v)>(s); });
}

namespace {

void log_signs(const Tensor& x) {
  if (auto* log = active_piece_log())
    for (double v : x.to_vector()) log->push_back(v > 0 ? 1 : (v < 0 ? -1 : 0));
}

}  // namespace

Tensor relu(const Tensor& x) {
  log_signs(x);
  return unary(
      x, [](auto v) { return v > 0 ? v : decltype(v)(0); },
      [](auto v, auto) { return v > 0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  return unary(
      x,
      [](auto v) {
        using T = decltype(v);
        return T(0.5) * v * (T(1) + std::erf(v * T(std::numbers::sqrt2 / 2)));
      },
      [](auto v, auto) {
        using T = decltype(v);
        const T cdf = T(0.5) * (T(1) + std::erf(v * T(std::numbers::sqrt2 / 2)));
        const T pdf = std::exp(T(-0.5) * v * v) * T(0.5 * std::numbers::inv_sqrtpi *
                                                    std::numbers::sqrt2);
        return cdf + v * pdf;
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](auto v) {
        using T = decltype(v);
        return T(1) / (T(1) + std::exp(-v));
      },
      [](auto, auto y) { return y * (1 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](auto v) { return std::tanh(v); }, [](auto, auto y) { return 1 - y * y; });
}

Tensor abs(const Tensor& x) {
  log_signs(x);
  return unary(
      x, [](auto v) { return std::abs(v); },
      [](auto v, auto) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary(
      x, [](auto v) { return v * v; }, [](auto v, auto) { return 2 * v; });
}

// ---- reductions ---------------------------------------------------------

Tensor sum(const Tensor& x) {
  Buffer out(x.dtype(), 1);
  dispatch(x.dtype(), [&]<typename T>() {
    const T* px = cptr<T>(x);
    T acc = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) acc += px[i];
    out.view<T>()[0] = acc;
  });
  return make_result({}, std::move(out), {x}, [x](TensorImpl& self) {
    dispatch(self.data.dtype(), [&]<typename T>() {
      const T g = self_grad<T>(self)[0];
      T* gx = gptr<T>(x);
      for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g;
    });
  });
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
  const int ax = detail::normalize_axis(axis, x.rank(), "sum");
  const auto sp = detail::split_axis(x.shape(), ax);
  Shape shape = x.shape();
  if (keepdim)
    shape[ax] = 1;
  else
    shape.erase(shape.begin() + ax);
  Buffer out(x.dtype(), sp.outer * sp.inner);
  dispatch(x.dtype(), [&]<typename T>() {
    const T* px = cptr<T>(x);
    T* po = out.view<T>().data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t e = 0; e < sp.extent; ++e) {
        const T* src = px + (o * sp.extent + e) * sp.inner;
        T* dst = po + o * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
      }
  });
  return make_result(std::move(shape), std::move(out), {x}, [x, sp](TensorImpl& self) {
    dispatch(self.data.dtype(), [&]<typename T>() {
      const T* g = self_grad<T>(self);
      T* gx = gptr<T>(x);
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t e = 0; e < sp.extent; ++e) {
          T* dst = gx + (o * sp.extent + e) * sp.inner;
          const T* src = g + o * sp.inner;
          for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
        }
    });
  });
}

Tensor mean(const Tensor& x) { return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean(const Tensor& x, std::vector<int> axes, bool keepdim) {
  for (auto& a : axes) a = detail::normalize_axis(a, x.rank(), "mean");
  std::sort(axes.begin(), axes.end(), std::greater<>());
  double count = 1;
  Tensor y = x;
  for (int a : axes) {
    count *= static_cast<double>(x.dim(a));
    y = sum(y, a, keepdim);
  }
  return mul_scalar(y, 1.0 / count);
}

}  // namespace odisr
