// SPDX-License-Identifier: Apache-2.0
#include "odisr/gradcheck_suite.hpp"

#include <algorithm>
#include <memory>

#include "odisr/attention.hpp"
#include "odisr/dfa.hpp"
#include "odisr/dgg.hpp"
#include "odisr/erp.hpp"
#include "odisr/error.hpp"
#include "odisr/metrics.hpp"
#include "odisr/model.hpp"
#include "odisr/ops.hpp"
#include "odisr/windowing.hpp"

namespace odisr {

namespace {

Tensor uniform(Philox& rng, Shape shape, double lo = -1, double hi = 1, bool grad = true) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  Tensor t = Tensor::from_values(std::move(shape), v, DType::f64);
  t.set_requires_grad(grad);
  return t;
}

// Every parameter, including zero-initialized branches, drawn uniformly at a
// moderate scale so finite differences stay clear of ReLU and bilinear kinks.
void randomize(const ParameterSet& ps, Philox& rng, double scale) {
  for (const auto& [name, t] : ps.entries()) {
    std::vector<double> v(t.numel());
    const bool norm = name.find("norm") != std::string::npos && name.ends_with(".weight");
    const double centre = norm ? 1.0 : 0.0;
    for (auto& x : v) x = centre + scale * (2 * rng.uniform() - 1);
    Tensor(t).assign(v);
  }
}

// Scalar probe: a fixed random weighting of every output element.
Tensor probe(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

using Cases = std::vector<GradCheckCase>;

constexpr GradCheckOptions kKinkSafe{.skip_kinks = true};

void tensor_cases(Cases& out) {
  auto rng = std::make_shared<Philox>(9);
  auto rt = [rng](Shape s, double lo = -1, double hi = 1) { return uniform(*rng, std::move(s), lo, hi); };
  Tensor a = rt({2, 3, 4}), b = rt({3, 1}), c = rt({2, 3, 4});
  Tensor x4 = rt({2, 3, 5, 6}), k = rt({4, 3, 3, 3}), kb = rt({4});
  Tensor dk = rt({3, 1, 3, 3}), pk = rt({2, 3, 1, 1});
  Tensor gm = rt({3}, 0.5, 1.5), bt = rt({3});
  Tensor img = rt({1, 2, 4, 5});
  Tensor coords = rt({1, 6, 2}, 0.1, 3.9);
  Tensor ps = rt({1, 8, 2, 3});
  Tensor w = rt({8}, -3, 3);
  Tensor ln_probe = rt({2, 5, 6, 3}), ps_probe = rt({1, 2, 4, 6});
  Tensor m1 = rt({2, 3, 4, 5}), m2 = rt({3, 5, 2});
  auto add_case = [&](const char* name, std::function<Tensor()> f, std::vector<Tensor> inputs) {
    out.push_back({"tensor", name, [f, inputs] { return grad_check(f, inputs, kKinkSafe); }});
  };
  add_case("add", [=] { return sum(square(add(a, b))); }, {a, b});
  add_case("sub", [=] { return sum(square(sub(a, b))); }, {a, b});
  add_case("mul", [=] { return sum(mul(mul(a, b), c)); }, {a, b, c});
  add_case("scalar ops", [=] { return sum(mul(add_scalar(mul_scalar(a, -1.5), 0.25), c)); }, {a});
  add_case("relu", [=] { return sum(mul(relu(a), c)); }, {a});
  add_case("gelu", [=] { return sum(mul(gelu(a), c)); }, {a});
  add_case("sigmoid", [=] { return sum(mul(sigmoid(a), c)); }, {a});
  add_case("tanh", [=] { return sum(mul(tanh(a), c)); }, {a});
  add_case("abs", [=] { return sum(mul(abs(a), c)); }, {a});
  add_case("sum axis", [=] { return sum(square(sum(a, 1, false))); }, {a});
  add_case("mean axes", [=] { return sum(square(mean(a, {0, 2}, true))); }, {a});
  add_case("reshape+permute", [=] { return sum(mul(permute(reshape(a, {6, 4}), {1, 0}), reshape(permute(c, {2, 0, 1}), {4, 6}))); }, {a});
  add_case("narrow+concat", [=] { return sum(square(concat({narrow(a, 1, 1, 2), narrow(c, 1, 0, 1)}, 1))); }, {a, c});
  add_case("expand", [=] { return sum(mul(expand(b, {2, 3, 4}), c)); }, {b});
  add_case("index_select", [=] { return sum(square(index_select(a, 2, {3, 0, 0, 1}))); }, {a});
  add_case("pad_reflect", [=] { return sum(square(pad_reflect(x4, 2, 1, 3, 0))); }, {x4});
  add_case("matmul broadcast", [=] { return sum(square(matmul(m1, m2))); }, {m1, m2});
  add_case("softmax", [=] { return sum(mul(softmax(a, 1), c)); }, {a});
  add_case("softmax cross", [=] { return sum(mul(softmax(w, 0), softmax(mul_scalar(w, -0.5), 0))); }, {w});
  add_case("layer_norm", [=] { return sum(mul(layer_norm(permute(x4, {0, 2, 3, 1}), 3, gm, bt), ln_probe)); }, {x4, gm, bt});
  add_case("conv2d zero", [=] { return sum(square(conv2d(x4, k, kb))); }, {x4, k, kb});
  add_case("conv2d replicate strided", [=] { return sum(square(conv2d(x4, k, kb, {2, 1, PadMode::replicate}))); }, {x4, k, kb});
  add_case("depthwise separable", [=] { return sum(square(depthwise_separable_conv(x4, dk, pk))); }, {x4, dk, pk});
  add_case("bilinear_sample", [=] { return sum(square(bilinear_sample(img, coords))); }, {img, coords});
  add_case("pixel_shuffle", [=] { return sum(mul(pixel_shuffle(ps, 2), ps_probe)); }, {ps});
}

void metric_cases(Cases& out) {
  out.push_back({"metrics", "ws_l1", [] {
                   Philox rng(21);
                   Tensor o = uniform(rng, {2, 3, 4, 6});
                   Tensor g = uniform(rng, {2, 3, 4, 6}, -1, 1, false);
                   Tensor d = distortion_map(4, 6).tensor(DType::f64);
                   return grad_check([=] { return ws_l1(o, g, d); }, {o}, kKinkSafe);
                 }});
}

void windowing_cases(Cases& out) {
  out.push_back({"windowing", "relative position bias", [] {
                   Philox rng(22);
                   RpeMlp mlp(rng, 2, DType::f64);
                   ParameterSet ps;
                   mlp.collect("rpe", ps);
                   randomize(ps, rng, 0.5);
                   Tensor w = uniform(rng, {2, 8, 8}, -1, 1, false);
                   return grad_check([=] { return probe(relative_position_bias({2, 4}, 2, mlp), w); }, ps.tensors(), kKinkSafe);
                 }});
  out.push_back({"windowing", "partition+merge", [] {
                   Philox rng(23);
                   Tensor x = uniform(rng, {1, 3, 4, 8});
                   Tensor w = uniform(rng, {4, 8, 3}, -1, 1, false);
                   return grad_check([=] {
                     Tensor p = partition(x, {2, 4});
                     return add(probe(p, w), sum(square(merge(p, {2, 4}, 4, 8))));
                   }, {x}, kKinkSafe);
                 }});
}

void dgg_cases(Cases& out) {
  out.push_back({"dgg", "distortion guidance generator", [] {
                   Philox rng(24);
                   DggParams p(rng, 8, DType::f64);
                   ParameterSet ps;
                   p.collect("dgg", ps);
                   randomize(ps, rng, 0.5);
                   Tensor d = distortion_map(8, 12).tensor(DType::f64);
                   Tensor w = uniform(rng, {1, 8, 8, 12}, -1, 1, false);
                   return grad_check([=] { return probe(dgg_forward(d, p), w); }, ps.tensors(), kKinkSafe);
                 }});
}

void attention_cases(Cases& out) {
  out.push_back({"attention", "rwin_sa", [] {
                   Philox rng(25);
                   RwinParams p(rng, 8, 4, {2, 4}, {4, 2}, DType::f64);
                   ParameterSet ps;
                   p.collect("rwin", ps);
                   randomize(ps, rng, 0.3);
                   Tensor x = uniform(rng, {1, 8, 4, 8});
                   Tensor w = uniform(rng, {1, 8, 4, 8}, -1, 1, false);
                   auto inputs = ps.tensors();
                   inputs.push_back(x);
                   return grad_check([=] { return probe(rwin_sa(x, p), w); }, inputs, kKinkSafe);
                 }});
  out.push_back({"attention", "dmrsa", [] {
                   Philox rng(26);
                   RwinParams p(rng, 8, 2, {2, 4}, {4, 2}, DType::f64);
                   ParameterSet ps;
                   p.collect("rwin", ps);
                   randomize(ps, rng, 0.3);
                   Tensor x = uniform(rng, {1, 8, 4, 8});
                   Tensor g = uniform(rng, {1, 8, 4, 8}, 0.2, 1.5);
                   Tensor w = uniform(rng, {1, 8, 4, 8}, -1, 1, false);
                   auto inputs = ps.tensors();
                   inputs.push_back(x);
                   inputs.push_back(g);
                   return grad_check([=] { return probe(dmrsa(x, g, p), w); }, inputs, kKinkSafe);
                 }});
  out.push_back({"attention", "ddsa", [] {
                   Philox rng(27);
                   DdsaParams p(rng, 8, 2, 9, 4.0, DType::f64);
                   ParameterSet ps;
                   p.collect("ddsa", ps);
                   randomize(ps, rng, 0.1);
                   Tensor x = uniform(rng, {1, 8, 6, 6});
                   Tensor d = distortion_map(6, 6).tensor(DType::f64);
                   Tensor w = uniform(rng, {1, 8, 6, 6}, -1, 1, false);
                   auto inputs = ps.tensors();
                   inputs.push_back(x);
                   return grad_check([=] { return probe(ddsa(x, d, p), w); }, inputs, kKinkSafe);
                 }});
}

void dfa_cases(Cases& out) {
  for (bool diff : {true, false})
    out.push_back({"dfa", diff ? "dfa" : "dfa without difference", [diff] {
                     Philox rng(28);
                     DfaParams p(rng, 8, 2, DType::f64, diff);
                     ParameterSet ps;
                     p.collect("dfa", ps);
                     randomize(ps, rng, 1.0);
                     Tensor f1 = uniform(rng, {2, 8, 3, 4}), f2 = uniform(rng, {2, 8, 3, 4});
                     Tensor w = uniform(rng, {2, 8, 3, 4}, -1, 1, false);
                     auto inputs = ps.tensors();
                     inputs.push_back(f1);
                     inputs.push_back(f2);
                     return grad_check([=] { return probe(dfa(f1, f2, p), w); }, inputs, kKinkSafe);
                   }});
}

void model_cases(Cases& out) {
  out.push_back({"model", "desk-scale DAL", [] {
                   ModelConfig c = ModelConfig::desk();
                   c.num_dabs = 1;
                   c.dals_per_dab = 1;
                   c.dtype = DType::f64;
                   auto m = std::make_shared<Model>(c);
                   Philox rng(29);
                   randomize(m->parameters(), rng, 0.1);
                   Tensor x = uniform(rng, {1, 32, 16, 16});
                   Tensor d = distortion_map(16, 16).tensor(DType::f64);
                   Tensor w = uniform(rng, {1, 32, 16, 16}, -1, 1, false);
                   // Only the guidance generator and the layer itself feed a DAL.
                   std::vector<Tensor> inputs;
                   for (const auto& [name, t] : m->parameters().entries())
                     if (name.starts_with("dgg.") || name.starts_with("dabs.0.dals.0.")) inputs.push_back(t);
                   inputs.push_back(x);
                   return grad_check([=] { return probe(m->dal_forward(x, m->context(d), m->dabs()[0].dals[0]), w); },
                                     inputs, {.max_coordinates = 800, .seed = 1, .skip_kinks = true});
                 }});
  out.push_back({"model", "desk-scale 2-DAB network", [] {
                   ModelConfig c = ModelConfig::desk();
                   c.dtype = DType::f64;
                   auto m = std::make_shared<Model>(c);
                   Philox rng(30);
                   randomize(m->parameters(), rng, 0.1);
                   Tensor lr = uniform(rng, {1, 3, 16, 16}, 0, 1);
                   Tensor w = uniform(rng, {1, 3, 32, 32}, -1, 1, false);
                   auto inputs = m->parameters().tensors();
                   inputs.push_back(lr);
                   return grad_check([=] { return probe(m->forward(lr), w); }, inputs,
                                     {.max_coordinates = 300, .seed = 2, .skip_kinks = true});
                 }});
}

}  // namespace

std::vector<std::string> gradcheck_modules() {
  return {"tensor", "metrics", "windowing", "dgg", "attention", "dfa", "model"};
}

std::vector<GradCheckCase> gradcheck_suite(const std::string& module) {
  Cases all;
  tensor_cases(all);
  metric_cases(all);
  windowing_cases(all);
  dgg_cases(all);
  attention_cases(all);
  dfa_cases(all);
  model_cases(all);
  if (module.empty() || module == "all") return all;
  const auto mods = gradcheck_modules();
  if (std::find(mods.begin(), mods.end(), module) == mods.end())
    throw ConfigError("unknown gradcheck module '" + module + "'");
  Cases out;
  std::copy_if(all.begin(), all.end(), std::back_inserter(out), [&](const auto& c) { return c.module == module; });
  return out;
}

}  // namespace odisr
