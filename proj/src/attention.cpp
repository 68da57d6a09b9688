// SPDX-License-Identifier: Apache-2.0
#include "odisr/attention.hpp"

#include <cmath>

#include "odisr/error.hpp"
#include "odisr/ops.hpp"

namespace odisr {

namespace {

void check_feature(const Tensor& x, const char* op) {
  if (x.rank() != 4) throw DimensionError(std::string(op) + " expects [b, c, h, w], got " + to_string(x.shape()));
}

// Multi-head attention of one orientation group inside its windows.
// q, k, v: [b, cg, h, w] -> [b, cg, h, w].
Tensor window_attention(const Tensor& q, const Tensor& k, const Tensor& v, const WindowSpec& spec,
                        std::int64_t heads, const Tensor& bias, Tensor* attention) {
  const std::int64_t h = q.dim(2), w = q.dim(3), cg = q.dim(1);
  const std::int64_t d = cg / heads, T = spec.tokens();
  auto split = [&](const Tensor& t, std::vector<int> order) {
    return permute(reshape(partition(t, spec), {-1, T, heads, d}), order);
  };
  Tensor qh = split(q, {0, 2, 1, 3});  // [B, n, T, d]
  Tensor kt = split(k, {0, 2, 3, 1});  // [B, n, d, T]
  Tensor vh = split(v, {0, 2, 1, 3});
  Tensor scores = add(mul_scalar(matmul(qh, kt), 1.0 / std::sqrt(static_cast<double>(d))), bias);
  Tensor attn = softmax(scores, -1);
  if (attention) *attention = attn;
  Tensor out = reshape(permute(matmul(attn, vh), {0, 2, 1, 3}), {-1, T, cg});
  return merge(out, spec, h, w);
}

Tensor rwin_impl(const Tensor& x, const Tensor* g, const RwinParams& p, RwinTrace* trace) {
  check_feature(x, "rectangle-window attention");
  const std::int64_t c = x.dim(1);
  if (c != p.channels())
    throw DimensionError("attention built for " + std::to_string(p.channels()) +
                         " channels, input has " + std::to_string(c));
  Tensor qkv = p.qkv(x);
  Tensor q = narrow(qkv, 1, 0, c);
  Tensor k = narrow(qkv, 1, c, c);
  Tensor v = narrow(qkv, 1, 2 * c, c);
  if (g) {
    if (g->rank() != 4 || g->dim(1) != c || g->dim(2) != x.dim(2) || g->dim(3) != x.dim(3) ||
        (g->dim(0) != 1 && g->dim(0) != x.dim(0)))
      throw DimensionError("guidance " + to_string(g->shape()) + " does not match features " +
                           to_string(x.shape()));
    k = mul(k, *g);
    v = mul(v, *g);
  }
  const HeadSplit split(p.heads);
  const std::int64_t half = c / 2, nh = split.per_group();
  Tensor bias_h = relative_position_bias(p.horizontal, nh, p.rpe_horizontal);
  Tensor bias_v = relative_position_bias(p.vertical, nh, p.rpe_vertical);
  Tensor out_h = window_attention(narrow(q, 1, 0, half), narrow(k, 1, 0, half), narrow(v, 1, 0, half),
                                  p.horizontal, nh, bias_h, trace ? &trace->attention_horizontal : nullptr);
  Tensor out_v = window_attention(narrow(q, 1, half, half), narrow(k, 1, half, half),
                                  narrow(v, 1, half, half), p.vertical, nh, bias_v,
                                  trace ? &trace->attention_vertical : nullptr);
  Tensor joined = concat({out_h, out_v}, 1);
  if (trace) trace->pre_projection = joined;
  return p.projection(joined);
}

}  // namespace

RwinParams::RwinParams(Philox& rng, std::int64_t channels, int heads_, WindowSpec h, WindowSpec v,
                       DType dtype)
    : heads(heads_), horizontal(h), vertical(v) {
  HeadSplit split(heads);
  horizontal.validate();
  vertical.validate();
  if (channels % heads != 0)
    throw ConfigError("channels " + std::to_string(channels) + " not divisible by " +
                      std::to_string(heads) + " heads");
  qkv = Conv::projection(rng, channels, 3 * channels, dtype);
  projection = Conv::projection(rng, channels, channels, dtype);
  projection.zero();
  rpe_horizontal = RpeMlp(rng, split.per_group(), dtype);
  rpe_vertical = RpeMlp(rng, split.per_group(), dtype);
}

void RwinParams::collect(const std::string& prefix, ParameterSet& set) const {
  qkv.collect(prefix + ".qkv", set);
  projection.collect(prefix + ".proj", set);
  rpe_horizontal.collect(prefix + ".rpe_h", set);
  rpe_vertical.collect(prefix + ".rpe_v", set);
}

Tensor rwin_sa(const Tensor& x, const RwinParams& p, RwinTrace* trace) {
  return rwin_impl(x, nullptr, p, trace);
}

Tensor dmrsa(const Tensor& x, const Tensor& g, const RwinParams& p, RwinTrace* trace) {
  return rwin_impl(x, &g, p, trace);
}

DdsaParams::DdsaParams(Philox& rng, std::int64_t channels, int heads_, int points_, double radius_,
                       DType dtype)
    : heads(heads_), points(points_), radius(radius_) {
  const int side = static_cast<int>(std::lround(std::sqrt(points)));
  if (points < 1 || side * side != points)
    throw ConfigError("deformable sample count must be a positive square, got " + std::to_string(points));
  if (!(radius > 0)) throw ConfigError("deformable offset radius must be positive");
  if (heads < 1 || channels % heads != 0)
    throw ConfigError("channels " + std::to_string(channels) + " not divisible by " +
                      std::to_string(heads) + " heads");
  offset1 = Conv(rng, channels + 1, channels, 3, dtype);
  offset2 = Conv(rng, channels, 2 * points, 3, dtype);
  q = Conv::projection(rng, channels, channels, dtype);
  kv = Conv::projection(rng, channels, 2 * channels, dtype);
  projection = Conv::projection(rng, channels, channels, dtype);
  projection.zero();
}

void DdsaParams::collect(const std::string& prefix, ParameterSet& set) const {
  offset1.collect(prefix + ".offset1", set);
  offset2.collect(prefix + ".offset2", set);
  q.collect(prefix + ".q", set);
  kv.collect(prefix + ".kv", set);
  projection.collect(prefix + ".proj", set);
}

std::pair<double, double> ddsa_reference_point(int p, int points) {
  const int side = static_cast<int>(std::lround(std::sqrt(points)));
  const double centre = (side - 1) / 2.0;
  return {p / side - centre, p % side - centre};
}

Tensor ddsa(const Tensor& x, const Tensor& distortion, const DdsaParams& p, DdsaTrace* trace) {
  check_feature(x, "deformable attention");
  const std::int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (c != p.channels())
    throw DimensionError("deformable attention built for " + std::to_string(p.channels()) +
                         " channels, input has " + std::to_string(c));
  if (distortion.rank() != 4 || distortion.dim(1) != 1 || distortion.dim(2) != h ||
      distortion.dim(3) != w || (distortion.dim(0) != 1 && distortion.dim(0) != b))
    throw DimensionError("distortion " + to_string(distortion.shape()) + " does not match features " +
                         to_string(x.shape()));
  const std::int64_t P = p.points, hw = h * w, nh = p.heads, d = c / nh;
  Tensor dmap = distortion.dim(0) == b ? distortion : expand(distortion, {b, 1, h, w});

  Tensor offsets = mul_scalar(tanh(p.offset2(relu(p.offset1(concat({x, dmap}, 1))))), p.radius);
  Tensor rel = reshape(permute(reshape(offsets, {b, P, 2, h, w}), {0, 3, 4, 1, 2}), {b, hw * P, 2});
  std::vector<double> base;
  base.reserve(static_cast<std::size_t>(hw * P * 2));
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j)
      for (int s = 0; s < P; ++s) {
        auto [dy, dx] = ddsa_reference_point(s, static_cast<int>(P));
        base.push_back(static_cast<double>(i) + dy);
        base.push_back(static_cast<double>(j) + dx);
      }
  Tensor coords = add(rel, Tensor::from_values({1, hw * P, 2}, base, x.dtype()));

  Tensor sampled = bilinear_sample(p.kv(x), coords);  // [b, 2c, hw * P]
  Tensor ks = reshape(narrow(sampled, 1, 0, c), {b, nh, d, hw, P});
  Tensor vs = reshape(narrow(sampled, 1, c, c), {b, nh, d, hw, P});
  Tensor qh = reshape(p.q(x), {b, nh, d, hw, 1});
  Tensor scores = mul_scalar(sum(mul(qh, ks), 2, true), 1.0 / std::sqrt(static_cast<double>(d)));
  Tensor attn = softmax(scores, -1);  // [b, nh, 1, hw, P]
  if (trace) {
    trace->offsets = offsets;
    trace->attention = attn;
  }
  Tensor out = reshape(sum(mul(attn, vs), -1), {b, c, h, w});
  return p.projection(out);
}

}  // namespace odisr
