// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>

#include "kernels.hpp"
#include "odisr/ops.hpp"
#include "op_util.hpp"

namespace odisr {

using detail::check_dtypes;
using detail::cptr;
using detail::gptr;
using detail::self_grad;

// ---- matmul ---------------------------------------------------------------

namespace {

struct MatmulPlan {
  std::size_t m = 0, k = 0, n = 0;
  std::vector<std::size_t> a_off, b_off;  // per output batch, element offsets
};

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_dtypes("matmul", a, b);
  if (a.rank() < 2 || b.rank() < 2 || a.dim(-1) != b.dim(-2))
    throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  MatmulPlan plan;
  plan.m = static_cast<std::size_t>(a.dim(-2));
  plan.k = static_cast<std::size_t>(a.dim(-1));
  plan.n = static_cast<std::size_t>(b.dim(-1));
  Shape pa(a.shape().begin(), a.shape().end() - 2);
  Shape pb(b.shape().begin(), b.shape().end() - 2);
  const std::size_t r = std::max(pa.size(), pb.size());
  Shape prefix(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    std::int64_t da = i + pa.size() >= r ? pa[i + pa.size() - r] : 1;
    std::int64_t db = i + pb.size() >= r ? pb[i + pb.size() - r] : 1;
    if (da != db && da != 1 && db != 1)
      throw DimensionError("matmul: batch prefixes of " + to_string(a.shape()) + " and " +
                           to_string(b.shape()) + " do not broadcast");
    prefix[i] = std::max(da, db);
  }
  const std::size_t batches = numel(prefix);
  {
    std::vector<std::size_t> sa(r, 0), sb(r, 0);
    std::size_t ma = plan.m * plan.k, mb = plan.k * plan.n;
    for (std::size_t i = r; i-- > 0;) {
      std::int64_t da = i + pa.size() >= r ? pa[i + pa.size() - r] : 1;
      std::int64_t db = i + pb.size() >= r ? pb[i + pb.size() - r] : 1;
      sa[i] = da == 1 ? 0 : ma;
      sb[i] = db == 1 ? 0 : mb;
      ma *= static_cast<std::size_t>(da);
      mb *= static_cast<std::size_t>(db);
    }
    plan.a_off.resize(batches);
    plan.b_off.resize(batches);
    std::vector<std::int64_t> idx(r, 0);
    for (std::size_t bi = 0; bi < batches; ++bi) {
      std::size_t oa = 0, ob = 0;
      for (std::size_t d = 0; d < r; ++d) {
        oa += sa[d] * static_cast<std::size_t>(idx[d]);
        ob += sb[d] * static_cast<std::size_t>(idx[d]);
      }
      plan.a_off[bi] = oa;
      plan.b_off[bi] = ob;
      for (std::size_t d = r; d-- > 0;) {
        if (++idx[d] < prefix[d]) break;
        idx[d] = 0;
      }
    }
  }
  Shape shape = prefix;
  shape.push_back(static_cast<std::int64_t>(plan.m));
  shape.push_back(static_cast<std::int64_t>(plan.n));
  Buffer out(a.dtype(), batches * plan.m * plan.n);
  dispatch(a.dtype(), [&]<typename T>() {
    const T* A = cptr<T>(a);
    const T* B = cptr<T>(b);
    T* C = out.view<T>().data();
    for (std::size_t bi = 0; bi < batches; ++bi)
      kernels::gemm<T>(plan.m, plan.n, plan.k, A + plan.a_off[bi], plan.k, B + plan.b_off[bi],
                       plan.n, C + bi * plan.m * plan.n, plan.n);
  });
  return make_result(std::move(shape), std::move(out), {a, b}, [a, b, plan](TensorImpl& self) {
    dispatch(self.data.dtype(), [&]<typename T>() {
      const T* G = self_grad<T>(self);
      const T* A = cptr<T>(a);
      const T* B = cptr<T>(b);
      const std::size_t m = plan.m, k = plan.k, n = plan.n;
      std::vector<T> tmp;
      for (std::size_t bi = 0; bi < plan.a_off.size(); ++bi) {
        const T* g = G + bi * m * n;
        if (a.requires_grad()) {
          // dA[m,k] += G[m,n] * B^T[n,k]
          tmp.assign(n * k, T(0));
          kernels::transpose<T>(k, n, B + plan.b_off[bi], tmp.data());
          kernels::gemm<T>(m, k, n, g, n, tmp.data(), k, gptr<T>(a) + plan.a_off[bi], k);
        }
        if (b.requires_grad()) {
          // dB[k,n] += A^T[k,m] * G[m,n]
          tmp.assign(k * m, T(0));
          kernels::transpose<T>(m, k, A + plan.a_off[bi], tmp.data());
          kernels::gemm<T>(k, n, m, tmp.data(), m, g, n, gptr<T>(b) + plan.b_off[bi], n);
        }
      }
    });
  });
}

// ---- softmax ------------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
  const int ax = detail::normalize_axis(axis, x.rank(), "softmax");
  const auto sp = detail::split_axis(x.shape(), ax);
  Buffer out(x.dtype(), x.numel());
  dispatch(x.dtype(), [&]<typename T>() {
    const T* px = cptr<T>(x);
    T* py = out.view<T>().data();
    std::vector<T> mx(sp.inner), total(sp.inner);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      const T* src = px + o * sp.extent * sp.inner;
      T* dst = py + o * sp.extent * sp.inner;
      std::fill(mx.begin(), mx.end(), -std::numeric_limits<T>::infinity());
      std::fill(total.begin(), total.end(), T(0));
      for (std::size_t e = 0; e < sp.extent; ++e)
        for (std::size_t i = 0; i < sp.inner; ++i) mx[i] = std::max(mx[i], src[e * sp.inner + i]);
      for (std::size_t e = 0; e < sp.extent; ++e)
        for (std::size_t i = 0; i < sp.inner; ++i) {
          const T v = std::exp(src[e * sp.inner + i] - mx[i]);
          dst[e * sp.inner + i] = v;
          total[i] += v;
        }
      for (std::size_t e = 0; e < sp.extent; ++e)
        for (std::size_t i = 0; i < sp.inner; ++i) dst[e * sp.inner + i] /= total[i];
    }
  });
  Shape shape = x.shape();
  return make_result(std::move(shape), std::move(out), {x}, [x, sp](TensorImpl& self) {
    dispatch(self.data.dtype(), [&]<typename T>() {
      const T* g = self_grad<T>(self);
      const T* y = self.data.view<T>().data();
      T* gx = gptr<T>(x);
      std::vector<T> dot(sp.inner);
      for (std::size_t o = 0; o < sp.outer; ++o) {
        const std::size_t base = o * sp.extent * sp.inner;
        std::fill(dot.begin(), dot.end(), T(0));
        for (std::size_t e = 0; e < sp.extent; ++e)
          for (std::size_t i = 0; i < sp.inner; ++i)
            dot[i] += g[base + e * sp.inner + i] * y[base + e * sp.inner + i];
        for (std::size_t e = 0; e < sp.extent; ++e)
          for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t j = base + e * sp.inner + i;
            gx[j] += y[j] * (g[j] - dot[i]);
          }
      }
    });
  });
}

// ---- layer norm ---------------------------------------------------------

Tensor layer_norm(const Tensor& x, int axis, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  const int ax = detail::normalize_axis(axis, x.rank(), "layer_norm");
  const auto sp = detail::split_axis(x.shape(), ax);
  if (gamma.numel() != sp.extent || beta.numel() != sp.extent)
    throw DimensionError("layer_norm: gamma/beta " + to_string(gamma.shape()) + "/" +
                         to_string(beta.shape()) + " do not match extent " +
                         std::to_string(sp.extent) + " of " + to_string(x.shape()));
  check_dtypes("layer_norm", x, gamma);
  check_dtypes("layer_norm", x, beta);
  Buffer out(x.dtype(), x.numel());
  // Saved normalized values and reciprocal std per position.
  auto xhat = std::make_shared<Buffer>(x.dtype(), x.numel());
  auto rstd = std::make_shared<Buffer>(x.dtype(), sp.outer * sp.inner);
  dispatch(x.dtype(), [&]<typename T>() {
    const T* px = cptr<T>(x);
    const T* pg = cptr<T>(gamma);
    const T* pb = cptr<T>(beta);
    T* py = out.view<T>().data();
    T* ph = xhat->view<T>().data();
    T* pr = rstd->view<T>().data();
    const T inv_n = T(1) / static_cast<T>(sp.extent);
    std::vector<T> mu(sp.inner), var(sp.inner);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      const std::size_t base = o * sp.extent * sp.inner;
      std::fill(mu.begin(), mu.end(), T(0));
      std::fill(var.begin(), var.end(), T(0));
      for (std::size_t e = 0; e < sp.extent; ++e)
        for (std::size_t i = 0; i < sp.inner; ++i) mu[i] += px[base + e * sp.inner + i];
      for (std::size_t i = 0; i < sp.inner; ++i) mu[i] *= inv_n;
      for (std::size_t e = 0; e < sp.extent; ++e)
        for (std::size_t i = 0; i < sp.inner; ++i) {
          const T d = px[base + e * sp.inner + i] - mu[i];
          var[i] += d * d;
        }
      for (std::size_t i = 0; i < sp.inner; ++i) {
        var[i] = T(1) / std::sqrt(var[i] * inv_n + static_cast<T>(eps));
        pr[o * sp.inner + i] = var[i];
      }
      for (std::size_t e = 0; e < sp.extent; ++e)
        for (std::size_t i = 0; i < sp.inner; ++i) {
          const std::size_t j = base + e * sp.inner + i;
          ph[j] = (px[j] - mu[i]) * var[i];
          py[j] = ph[j] * pg[e] + pb[e];
        }
    }
  });
  Shape shape = x.shape();
  return make_result(
      std::move(shape), std::move(out), {x, gamma, beta},
      [x, gamma, beta, sp, xhat, rstd](TensorImpl& self) {
        dispatch(self.data.dtype(), [&]<typename T>() {
          const T* g = self_grad<T>(self);
          const T* ph = xhat->view<T>().data();
          const T* pr = rstd->view<T>().data();
          const T* pg = cptr<T>(gamma);
          if (gamma.requires_grad() || beta.requires_grad()) {
            T* gg = gamma.requires_grad() ? gptr<T>(gamma) : nullptr;
            T* gb = beta.requires_grad() ? gptr<T>(beta) : nullptr;
            for (std::size_t o = 0; o < sp.outer; ++o)
              for (std::size_t e = 0; e < sp.extent; ++e) {
                const std::size_t base = (o * sp.extent + e) * sp.inner;
                T sg = 0, sb = 0;
                for (std::size_t i = 0; i < sp.inner; ++i) {
                  sg += g[base + i] * ph[base + i];
                  sb += g[base + i];
                }
                if (gg) gg[e] += sg;
                if (gb) gb[e] += sb;
              }
          }
          if (!x.requires_grad()) return;
          T* gx = gptr<T>(x);
          const T inv_n = T(1) / static_cast<T>(sp.extent);
          std::vector<T> s1(sp.inner), s2(sp.inner);
          for (std::size_t o = 0; o < sp.outer; ++o) {
            const std::size_t base = o * sp.extent * sp.inner;
            std::fill(s1.begin(), s1.end(), T(0));
            std::fill(s2.begin(), s2.end(), T(0));
            for (std::size_t e = 0; e < sp.extent; ++e)
              for (std::size_t i = 0; i < sp.inner; ++i) {
                const std::size_t j = base + e * sp.inner + i;
                const T dh = g[j] * pg[e];
                s1[i] += dh;
                s2[i] += dh * ph[j];
              }
            for (std::size_t e = 0; e < sp.extent; ++e)
              for (std::size_t i = 0; i < sp.inner; ++i) {
                const std::size_t j = base + e * sp.inner + i;
                const T dh = g[j] * pg[e];
                gx[j] += pr[o * sp.inner + i] * (dh - inv_n * s1[i] - inv_n * ph[j] * s2[i]);
              }
          }
        });
      });
}

// ---- convolution --------------------------------------------------------

namespace {

struct ConvGeometry {
  std::int64_t b, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
  PadMode mode;
};

ConvGeometry conv_geometry(const Tensor& x, std::int64_t cout, std::int64_t kh, std::int64_t kw,
                           const ConvOptions& opts, const char* op) {
  if (x.rank() != 4) throw DimensionError(std::string(op) + ": expected [b,c,h,w] input, got " + to_string(x.shape()));
  if (opts.stride < 1)
    throw ConfigError(std::string(op) + ": stride must be >= 1, got " + std::to_string(opts.stride));
  ConvGeometry g{};
  g.b = x.shape()[0];
  g.cin = x.shape()[1];
  g.h = x.shape()[2];
  g.w = x.shape()[3];
  g.cout = cout;
  g.kh = kh;
  g.kw = kw;
  g.stride = opts.stride;
  g.mode = opts.mode;
  if (opts.padding < -1)
    throw ConfigError(std::string(op) + ": padding must be >= 0 or -1 (same)");
  if (opts.padding == -1) {
    if (kh != kw || kh % 2 == 0)
      throw ConfigError(std::string(op) + ": same-padding needs a square odd kernel");
    if (opts.stride != 1) throw ConfigError(std::string(op) + ": same-padding requires stride 1");
    g.pad = kh / 2;
  } else {
    g.pad = opts.padding;
  }
  if (kh > g.h + 2 * g.pad || kw > g.w + 2 * g.pad)
    throw ConfigError(std::string(op) + ": kernel " + std::to_string(kh) + "x" +
                      std::to_string(kw) + " exceeds padded input of " + to_string(x.shape()));
  g.ho = (g.h + 2 * g.pad - kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - kw) / g.stride + 1;
  return g;
}

/// Source index for padded coordinate i in [−pad, n+pad), or −1 for zero.
inline std::int64_t pad_source(std::int64_t i, std::int64_t n, PadMode mode) {
  if (i >= 0 && i < n) return i;
  if (mode == PadMode::zero) return -1;
  return i < 0 ? 0 : n - 1;
}

/// cols[(c*kh + dy)*kw + dx][oy*wo + ox] for one batch image.
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
  const std::size_t plane = static_cast<std::size_t>(g.ho * g.wo);
  for (std::int64_t c = 0; c < g.cin; ++c)
    for (std::int64_t dy = 0; dy < g.kh; ++dy)
      for (std::int64_t dx = 0; dx < g.kw; ++dx) {
        T* row = cols + static_cast<std::size_t>((c * g.kh + dy) * g.kw + dx) * plane;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t sy = pad_source(oy * g.stride + dy - g.pad, g.h, g.mode);
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t sx = pad_source(ox * g.stride + dx - g.pad, g.w, g.mode);
            row[oy * g.wo + ox] = (sy < 0 || sx < 0) ? T(0) : x[(c * g.h + sy) * g.w + sx];
          }
        }
      }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* gx) {
  const std::size_t plane = static_cast<std::size_t>(g.ho * g.wo);
  for (std::int64_t c = 0; c < g.cin; ++c)
    for (std::int64_t dy = 0; dy < g.kh; ++dy)
      for (std::int64_t dx = 0; dx < g.kw; ++dx) {
        const T* row = cols + static_cast<std::size_t>((c * g.kh + dy) * g.kw + dx) * plane;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t sy = pad_source(oy * g.stride + dy - g.pad, g.h, g.mode);
          if (sy < 0) continue;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t sx = pad_source(ox * g.stride + dx - g.pad, g.w, g.mode);
            if (sx < 0) continue;
            gx[(c * g.h + sy) * g.w + sx] += row[oy * g.wo + ox];
          }
        }
      }
}

void check_bias(const Tensor& bias, std::int64_t cout, const Tensor& x, const char* op) {
  if (!bias.defined()) return;
  check_dtypes(op, x, bias);
  if (bias.numel() != static_cast<std::size_t>(cout))
    throw DimensionError(std::string(op) + ": bias " + to_string(bias.shape()) + " for " +
                         std::to_string(cout) + " output channels");
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, ConvOptions opts) {
  check_dtypes("conv2d", x, weight);
  if (weight.rank() != 4)
    throw DimensionError("conv2d: weight must be [cout,cin,kh,kw], got " + to_string(weight.shape()));
  const auto g = conv_geometry(x, weight.shape()[0], weight.shape()[2], weight.shape()[3], opts,
                               "conv2d");
  if (weight.shape()[1] != g.cin)
    throw DimensionError("conv2d: weight " + to_string(weight.shape()) + " expects " +
                         std::to_string(weight.shape()[1]) + " input channels, input is " +
                         to_string(x.shape()));
  check_bias(bias, g.cout, x, "conv2d");
  const bool pointwise = g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
  const std::size_t plane = static_cast<std::size_t>(g.ho * g.wo);
  const std::size_t kdim = static_cast<std::size_t>(g.cin * g.kh * g.kw);
  Buffer out(x.dtype(), static_cast<std::size_t>(g.b * g.cout) * plane);
  dispatch(x.dtype(), [&]<typename T>() {
    const T* px = cptr<T>(x);
    const T* pw = cptr<T>(weight);
    T* po = out.view<T>().data();
    std::vector<T> cols(pointwise ? 0 : kdim * plane);
    for (std::int64_t bi = 0; bi < g.b; ++bi) {
      const T* xb = px + static_cast<std::size_t>(bi * g.cin * g.h * g.w);
      const T* src = xb;
      if (!pointwise) {
        im2col<T>(g, xb, cols.data());
        src = cols.data();
      }
      T* ob = po + static_cast<std::size_t>(bi * g.cout) * plane;
      kernels::gemm<T>(static_cast<std::size_t>(g.cout), plane, kdim, pw, kdim, src, plane, ob,
                       plane);
      if (bias.defined()) {
        const T* pb = cptr<T>(bias);
        for (std::int64_t c = 0; c < g.cout; ++c)
          for (std::size_t i = 0; i < plane; ++i) ob[c * plane + i] += pb[c];
      }
    }
  });
  return make_result(
      {g.b, g.cout, g.ho, g.wo}, std::move(out), {x, weight, bias},
      [x, weight, bias, g, pointwise, plane, kdim](TensorImpl& self) {
        dispatch(self.data.dtype(), [&]<typename T>() {
          const T* G = self_grad<T>(self);
          const T* px = cptr<T>(x);
          const T* pw = cptr<T>(weight);
          std::vector<T> cols(pointwise ? 0 : kdim * plane);
          std::vector<T> cols_t(weight.requires_grad() ? kdim * plane : 0);
          std::vector<T> w_t;
          if (x.requires_grad()) {
            w_t.resize(kdim * static_cast<std::size_t>(g.cout));
            kernels::transpose<T>(static_cast<std::size_t>(g.cout), kdim, pw, w_t.data());
          }
          std::vector<T> dcols(x.requires_grad() && !pointwise ? kdim * plane : 0);
          for (std::int64_t bi = 0; bi < g.b; ++bi) {
            const T* gb = G + static_cast<std::size_t>(bi * g.cout) * plane;
            const T* xb = px + static_cast<std::size_t>(bi * g.cin * g.h * g.w);
            if (bias.defined() && bias.requires_grad()) {
              T* gbias = gptr<T>(bias);
              for (std::int64_t c = 0; c < g.cout; ++c) {
                T s = 0;
                for (std::size_t i = 0; i < plane; ++i) s += gb[c * plane + i];
                gbias[c] += s;
              }
            }
            if (weight.requires_grad()) {
              const T* src = xb;
              if (!pointwise) {
                im2col<T>(g, xb, cols.data());
                src = cols.data();
              }
              kernels::transpose<T>(kdim, plane, src, cols_t.data());
              kernels::gemm<T>(static_cast<std::size_t>(g.cout), kdim, plane, gb, plane,
                               cols_t.data(), kdim, gptr<T>(weight), kdim);
            }
            if (x.requires_grad()) {
              T* gx = gptr<T>(x) + static_cast<std::size_t>(bi * g.cin * g.h * g.w);
              if (pointwise) {
                kernels::gemm<T>(kdim, plane, static_cast<std::size_t>(g.cout), w_t.data(),
                                 static_cast<std::size_t>(g.cout), gb, plane, gx, plane);
              } else {
                std::fill(dcols.begin(), dcols.end(), T(0));
                kernels::gemm<T>(kdim, plane, static_cast<std::size_t>(g.cout), w_t.data(),
                                 static_cast<std::size_t>(g.cout), gb, plane, dcols.data(), plane);
                col2im<T>(g, dcols.data(), gx);
              }
            }
          }
        });
      });
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        ConvOptions opts) {
  check_dtypes("depthwise_conv2d", x, weight);
  if (weight.rank() != 4 || weight.shape()[1] != 1)
    throw DimensionError("depthwise_conv2d: weight must be [c,1,kh,kw], got " +
                         to_string(weight.shape()));
  const auto g = conv_geometry(x, weight.shape()[0], weight.shape()[2], weight.shape()[3], opts,
                               "depthwise_conv2d");
  if (weight.shape()[0] != g.cin)
    throw DimensionError("depthwise_conv2d: kernel has " + std::to_string(weight.shape()[0]) +
                         " channels, input " + to_string(x.shape()));
  check_bias(bias, g.cin, x, "depthwise_conv2d");
  Buffer out(x.dtype(), static_cast<std::size_t>(g.b * g.cin * g.ho * g.wo));
  // Each output pixel sums kernel taps in (dy, dx) order, so every column of
  // a row-constant input sees identical arithmetic.
  auto forward = [&]<typename T>() {
    const T* px = cptr<T>(x);
    const T* pw = cptr<T>(weight);
    T* po = out.view<T>().data();
    for (std::int64_t bi = 0; bi < g.b; ++bi)
      for (std::int64_t c = 0; c < g.cin; ++c) {
        const T* xp = px + (bi * g.cin + c) * g.h * g.w;
        const T* wk = pw + c * g.kh * g.kw;
        T* op = po + (bi * g.cin + c) * g.ho * g.wo;
        const T b0 = bias.defined() ? cptr<T>(bias)[c] : T(0);
        for (std::int64_t oy = 0; oy < g.ho; ++oy)
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            T acc = 0;
            for (std::int64_t dy = 0; dy < g.kh; ++dy) {
              const std::int64_t sy = pad_source(oy * g.stride + dy - g.pad, g.h, g.mode);
              if (sy < 0) continue;
              for (std::int64_t dx = 0; dx < g.kw; ++dx) {
                const std::int64_t sx = pad_source(ox * g.stride + dx - g.pad, g.w, g.mode);
                if (sx < 0) continue;
                acc += wk[dy * g.kw + dx] * xp[sy * g.w + sx];
              }
            }
            op[oy * g.wo + ox] = acc + b0;
          }
      }
  };
  dispatch(x.dtype(), forward);
  return make_result(
      {g.b, g.cin, g.ho, g.wo}, std::move(out), {x, weight, bias},
      [x, weight, bias, g](TensorImpl& self) {
        dispatch(self.data.dtype(), [&]<typename T>() {
          const T* G = self_grad<T>(self);
          const T* px = cptr<T>(x);
          const T* pw = cptr<T>(weight);
          T* gx = x.requires_grad() ? gptr<T>(x) : nullptr;
          T* gw = weight.requires_grad() ? gptr<T>(weight) : nullptr;
          T* gbias = bias.defined() && bias.requires_grad() ? gptr<T>(bias) : nullptr;
          for (std::int64_t bi = 0; bi < g.b; ++bi)
            for (std::int64_t c = 0; c < g.cin; ++c) {
              const std::int64_t xoff = (bi * g.cin + c) * g.h * g.w;
              const T* gp = G + (bi * g.cin + c) * g.ho * g.wo;
              const T* wk = pw + c * g.kh * g.kw;
              for (std::int64_t oy = 0; oy < g.ho; ++oy)
                for (std::int64_t ox = 0; ox < g.wo; ++ox) {
                  const T go = gp[oy * g.wo + ox];
                  if (gbias) gbias[c] += go;
                  for (std::int64_t dy = 0; dy < g.kh; ++dy) {
                    const std::int64_t sy = pad_source(oy * g.stride + dy - g.pad, g.h, g.mode);
                    if (sy < 0) continue;
                    for (std::int64_t dx = 0; dx < g.kw; ++dx) {
                      const std::int64_t sx =
                          pad_source(ox * g.stride + dx - g.pad, g.w, g.mode);
                      if (sx < 0) continue;
                      const std::int64_t xi = xoff + sy * g.w + sx;
                      if (gw) gw[c * g.kh * g.kw + dy * g.kw + dx] += go * px[xi];
                      if (gx) gx[xi] += go * wk[dy * g.kw + dx];
                    }
                  }
                }
            }
        });
      });
}

Tensor depthwise_separable_conv(const Tensor& x, const Tensor& depthwise, const Tensor& pointwise,
                                const Tensor& depthwise_bias, const Tensor& pointwise_bias,
                                PadMode mode) {
  if (x.rank() != 4 || depthwise.rank() != 4 || depthwise.shape()[0] != x.shape()[1])
    throw DimensionError("depthwise_separable_conv: depthwise kernel " +
                         to_string(depthwise.shape()) + " does not match input channels of " +
                         to_string(x.shape()));
  ConvOptions opts;
  opts.mode = mode;
  Tensor y = depthwise_conv2d(x, depthwise, depthwise_bias, opts);
  return conv2d(y, pointwise, pointwise_bias, ConvOptions{1, 0, mode});
}

}  // namespace odisr
