// SPDX-License-Identifier: Apache-2.0
#include "odisr/layers.hpp"

#include <cmath>

#include "odisr/error.hpp"

namespace odisr {

void ParameterSet::add(const std::string& name, Tensor t) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  t.set_requires_grad(true);
  entries_.emplace_back(name, std::move(t));
}

bool ParameterSet::contains(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return true;
  return false;
}

const Tensor& ParameterSet::get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw ConfigError("unknown parameter '" + name + "'");
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  for (const auto& [n, t] : entries_) out.push_back(n);
  return out;
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  for (const auto& [n, t] : entries_) out.push_back(t);
  return out;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& [n, t] : entries_) t.zero_grad();
}

Tensor init_trunc_normal(Philox& rng, Shape shape, double sigma, DType dtype) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.truncated_normal(sigma);
  return Tensor::from_values(std::move(shape), v, dtype);
}

Tensor init_uniform(Philox& rng, Shape shape, double bound, DType dtype) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = (2.0 * rng.uniform() - 1.0) * bound;
  return Tensor::from_values(std::move(shape), v, dtype);
}

Linear::Linear(Philox& rng, std::int64_t in, std::int64_t out, DType dtype, bool zero)
    : weight(zero ? Tensor::zeros({in, out}, dtype) : init_trunc_normal(rng, {in, out}, 0.02, dtype)),
      bias(Tensor::zeros({out}, dtype)) {}

Tensor Linear::operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }

void Linear::collect(const std::string& prefix, ParameterSet& set) const {
  set.add(prefix + ".weight", weight);
  set.add(prefix + ".bias", bias);
}

Conv::Conv(Philox& rng, std::int64_t in, std::int64_t out, int kernel, DType dtype, PadMode mode)
    : mode(mode) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
  weight = init_uniform(rng, {out, in, kernel, kernel}, bound, dtype);
  bias = init_uniform(rng, {out}, bound, dtype);
}

Conv Conv::projection(Philox& rng, std::int64_t in, std::int64_t out, DType dtype) {
  Conv c;
  c.weight = init_trunc_normal(rng, {out, in, 1, 1}, 0.02, dtype);
  c.bias = Tensor::zeros({out}, dtype);
  return c;
}

Tensor Conv::operator()(const Tensor& x) const {
  ConvOptions opts;
  opts.mode = mode;
  return conv2d(x, weight, bias, opts);
}

void Conv::collect(const std::string& prefix, ParameterSet& set) const {
  set.add(prefix + ".weight", weight);
  set.add(prefix + ".bias", bias);
}

void Conv::zero() {
  for (Tensor* t : {&weight, &bias})
    dispatch(t->dtype(), [&]<typename T>() {
      auto d = t->mutable_data<T>();
      std::fill(d.begin(), d.end(), T(0));
    });
}

ChannelNorm::ChannelNorm(std::int64_t channels, DType dtype)
    : gamma(Tensor::full({channels}, 1.0, dtype)), beta(Tensor::zeros({channels}, dtype)) {}

Tensor ChannelNorm::operator()(const Tensor& x) const { return layer_norm(x, 1, gamma, beta); }

void ChannelNorm::collect(const std::string& prefix, ParameterSet& set) const {
  set.add(prefix + ".weight", gamma);
  set.add(prefix + ".bias", beta);
}

}  // namespace odisr
