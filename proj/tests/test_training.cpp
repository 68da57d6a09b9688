// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "odisr/erp.hpp"
#include "odisr/error.hpp"
#include "odisr/ops.hpp"
#include "odisr/training.hpp"
#include "test_util.hpp"

using namespace odisr;
using odisr::testing::bit_equal;
using odisr::testing::random_tensor;

namespace {

ModelConfig small_model() {
  ModelConfig c;
  c.num_dabs = 1;
  c.dals_per_dab = 1;
  c.embed_dim = 8;
  c.heads = 2;
  c.h_window = {2, 4};
  c.v_window = {4, 2};
  c.dfa_reduction = 2;
  return c;
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::filesystem::path fresh_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("odisr_test_training_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("learning rate schedule") {
  TrainConfig c;
  c.iterations = 500000;
  CHECK(lr_at(0, c) == 2e-4);
  CHECK(lr_at(249999, c) == 2e-4);
  CHECK(lr_at(300000, c) == 1e-4);
  CHECK(lr_at(400000, c) == 5e-5);
  CHECK(lr_at(480000, c) == doctest::Approx(1.25e-5).epsilon(1e-15));
  CHECK_THROWS_AS(lr_at(-1, c), RangeError);
  CHECK_THROWS_AS(lr_at(500001, c), RangeError);

  c.iterations = 2000;
  int halvings = 0;
  for (int it = 1; it <= c.iterations; ++it) {
    CHECK(lr_at(it, c) <= lr_at(it - 1, c));
    if (lr_at(it, c) < lr_at(it - 1, c)) ++halvings;
  }
  CHECK(halvings == 4);
  CHECK(lr_at(c.iterations, c) == 2e-4 / 16);
}

TEST_CASE("training config JSON is strict") {
  TrainConfig c;
  c.batch = 3;
  CHECK(to_json(train_config_from_json(to_json(c))) == to_json(c));
  auto j = to_json(c);
  j["momentum"] = 0.5;
  CHECK_THROWS_AS(train_config_from_json(j), ConfigError);
  j = to_json(c);
  j["milestones"] = {0.5, 0.4};
  CHECK_THROWS_AS(train_config_from_json(j), ConfigError);
  j = to_json(c);
  j["batch"] = 0;
  CHECK_THROWS_AS(train_config_from_json(j), ConfigError);
}

TEST_CASE("first Adam step moves each weight by lr against its gradient sign") {
  ParameterSet ps;
  Philox rng(1);
  Tensor w = random_tensor(rng, {4, 5});
  ps.add("w", w);
  const Tensor before = w.detach();
  Tensor c = random_tensor(rng, {4, 5}, DType::f64, -3, 3);
  sum(mul(w, c)).backward();
  Adam adam(ps, 0.9, 0.99, 1e-8);
  adam.step(ps, 1e-3, 0);
  CHECK(adam.steps() == 1);
  const auto b = before.to_vector(), a = w.to_vector(), g = c.to_vector();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double expect = -1e-3 * (g[i] > 0 ? 1.0 : -1.0) * std::abs(g[i]) / (std::abs(g[i]) + 1e-8);
    CHECK(std::abs((a[i] - b[i]) - expect) < 1e-15);
  }
}

TEST_CASE("zero gradient leaves parameters unchanged and advances the step") {
  ParameterSet ps;
  Philox rng(2);
  Tensor w = random_tensor(rng, {3, 3});
  ps.add("w", w);
  const Tensor before = w.detach();
  Adam adam(ps, 0.9, 0.99, 1e-8);
  sum(mul_scalar(w, 0.0)).backward();
  adam.step(ps, 1e-3, 0);
  ps.zero_grad();
  adam.step(ps, 1e-3, 1);
  CHECK(adam.steps() == 2);
  CHECK(bit_equal(w, before));
}

TEST_CASE("non-finite gradients abort with the parameter name") {
  ParameterSet ps;
  Tensor w = Tensor::full({2}, 1.0, DType::f64);
  Tensor u = Tensor::full({2}, 1.0, DType::f64);
  ps.add("layer.weight", w);
  ps.add("other", u);
  sum(mul_scalar(w, std::numeric_limits<double>::infinity())).backward();
  Adam adam(ps, 0.9, 0.99, 1e-8);
  const Tensor before = u.detach();
  try {
    adam.step(ps, 1e-3, 17);
    FAIL("accepted a non-finite gradient");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("layer.weight") != std::string::npos);
    CHECK(msg.find("17") != std::string::npos);
  }
  CHECK(bit_equal(u, before));
  CHECK(adam.steps() == 0);
}

TEST_CASE("patches are aligned and carry true-latitude weights") {
  const Dataset data = synthetic_dataset(3, 40, 2, 5, DType::f64);
  REQUIRE(data.items.size() == 3);
  CHECK(data.items[0].lr.shape() == Shape{1, 3, 20, 20});
  Philox rng(3);
  const PatchBatch b = sample_patches(data, 8, 4, rng);
  CHECK(b.lr.shape() == Shape{4, 3, 8, 8});
  CHECK(b.hr.shape() == Shape{4, 3, 16, 16});
  for (std::size_t n = 0; n < b.crops.size(); ++n) {
    const auto& c = b.crops[n];
    const auto& item = data.items[c.image];
    const auto i = static_cast<std::int64_t>(n);
    CHECK(bit_equal(narrow(b.lr, 0, i, 1), narrow(narrow(item.lr, 2, c.y, 8), 3, c.x, 8)));
    CHECK(bit_equal(narrow(b.hr, 0, i, 1), narrow(narrow(item.hr, 2, 2 * c.y, 16), 3, 2 * c.x, 16)));
    const auto full_lr = distortion_map(20, 20);
    const auto full_hr = distortion_map(40, 40);
    const auto dl = narrow(b.lr_distortion, 0, i, 1).to_vector();
    const auto dh = narrow(b.hr_distortion, 0, i, 1).to_vector();
    for (std::int64_t r = 0; r < 8; ++r) CHECK(dl[static_cast<std::size_t>(r * 8)] == full_lr.row_weight(c.y + r));
    for (std::int64_t r = 0; r < 16; ++r)
      CHECK(dh[static_cast<std::size_t>(r * 16 + 5)] == full_hr.row_weight(2 * c.y + r));
  }
  Philox again(3);
  const PatchBatch b2 = sample_patches(data, 8, 4, again);
  CHECK(bit_equal(b.lr, b2.lr));
  CHECK(bit_equal(b.hr, b2.hr));
}

TEST_CASE("flipped patches mirror both resolutions") {
  const Dataset data = synthetic_dataset(1, 32, 2, 6, DType::f64);
  Philox rng(4);
  PatchBatch b;
  for (int tries = 0; tries < 20; ++tries) {
    b = sample_patches(data, 8, 1, rng, true);
    if (b.crops[0].flipped) break;
  }
  REQUIRE(b.crops[0].flipped);
  const auto& c = b.crops[0];
  const auto lr = b.lr.to_vector();
  const auto src = narrow(narrow(data.items[0].lr, 2, c.y, 8), 3, c.x, 8).to_vector();
  for (int r = 0; r < 8; ++r)
    for (int col = 0; col < 8; ++col) CHECK(lr[static_cast<std::size_t>(r * 8 + col)] == src[static_cast<std::size_t>(r * 8 + 7 - col)]);
}

TEST_CASE("small images are skipped and an empty pool is an error") {
  std::vector<std::pair<std::string, Image8>> images;
  images.emplace_back("big", Image8{32, 32, std::vector<std::uint8_t>(32 * 32 * 3, 100)});
  images.emplace_back("small", Image8{9, 33, std::vector<std::uint8_t>(9 * 33 * 3, 50)});
  const Dataset data = make_dataset(images, 2, DType::f32);
  CHECK(data.items[1].hr.shape() == Shape{1, 3, 8, 32});
  Philox rng(5);
  const PatchBatch b = sample_patches(data, 8, 6, rng);
  for (const auto& c : b.crops) CHECK(c.image == 0);
  CHECK_THROWS_AS(sample_patches(data, 17, 1, rng), DimensionError);
}

TEST_CASE("interrupted training resumes bit-identically") {
  const Dataset data = synthetic_dataset(2, 32, 2, 7, DType::f32);
  TrainConfig cfg;
  cfg.iterations = 12;
  cfg.batch = 2;
  cfg.patch = 8;
  cfg.log_every = 4;
  cfg.lr0 = 1e-3;

  const auto full_dir = fresh_dir("full");
  Model a(small_model());
  const TrainResult ra = train(a, data, cfg, {.out_dir = full_dir});
  CHECK(ra.trace.size() == 12);
  CHECK(std::isfinite(ra.final_eval_loss));

  const auto split_dir = fresh_dir("split");
  Model b(small_model());
  const TrainResult first = train(b, data, cfg, {.out_dir = split_dir, .stop_after = 5});
  CHECK(first.next_iteration == 5);
  Model c(small_model());
  const TrainResult second = train(c, data, cfg, {.out_dir = split_dir, .resume = split_dir / "last.ckpt"});
  CHECK(second.trace.size() == 7);
  CHECK(slurp(full_dir / "final.ckpt") == slurp(split_dir / "final.ckpt"));
  CHECK(slurp(full_dir / "best.ckpt") == slurp(split_dir / "best.ckpt"));
  CHECK(slurp(full_dir / "loss.csv") == slurp(split_dir / "loss.csv"));

  // A second identical run is bit-identical too.
  const auto again_dir = fresh_dir("again");
  Model d(small_model());
  train(d, data, cfg, {.out_dir = again_dir});
  CHECK(slurp(full_dir / "final.ckpt") == slurp(again_dir / "final.ckpt"));

  TrainConfig other = cfg;
  other.lr0 = 5e-4;
  Model e(small_model());
  CHECK_THROWS_AS(train(e, data, other, {.resume = split_dir / "last.ckpt"}), ConfigError);
  for (const auto& p : {full_dir, split_dir, again_dir}) std::filesystem::remove_all(p);
}

TEST_CASE("non-finite loss aborts with the trace on disk") {
  const Dataset data = synthetic_dataset(1, 32, 2, 8, DType::f32);
  Model m(small_model());
  TrainConfig cfg;
  cfg.iterations = 3;
  cfg.patch = 8;
  const auto dir = fresh_dir("nan");
  Tensor w = m.parameters().get("final.bias");
  w.assign({NAN, 0.0, 0.0});
  CHECK_THROWS_AS(train(m, data, cfg, {.out_dir = dir}), NumericError);
  CHECK(std::filesystem::exists(dir / "loss.csv"));
  std::filesystem::remove_all(dir);
}
