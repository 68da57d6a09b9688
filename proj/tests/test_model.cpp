// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "odisr/error.hpp"
#include "odisr/gradcheck.hpp"
#include "odisr/model.hpp"
#include "test_util.hpp"

using namespace odisr;
using odisr::testing::bit_equal;
using odisr::testing::random_tensor;

namespace {

ModelConfig tiny(DType dtype = DType::f64) {
  ModelConfig c;
  c.num_dabs = 1;
  c.dals_per_dab = 1;
  c.embed_dim = 8;
  c.heads = 2;
  c.h_window = {2, 4};
  c.v_window = {4, 2};
  c.dfa_reduction = 2;
  c.dtype = dtype;
  return c;
}

// Moves every parameter off its initial value, including zero-initialized
// branches, at a scale small enough to keep finite differences off kinks.
void randomize(ParameterSet& ps, Philox& rng, double scale) {
  for (const auto& [name, t] : ps.entries()) {
    std::vector<double> v(t.numel());
    const bool gamma = name.find("norm") != std::string::npos && name.ends_with(".weight");
    for (auto& x : v) x = (gamma ? 1.0 : 0.0) + scale * (2.0 * rng.uniform() - 1.0);
    Tensor(t).assign(v);
  }
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("odisr_test_model_" + name);
}

bool has_prefix(const ParameterSet& ps, const std::string& needle) {
  for (const auto& n : ps.names())
    if (n.find(needle) != std::string::npos) return true;
  return false;
}

}  // namespace

TEST_CASE("config JSON round-trips and rejects bad input") {
  ModelConfig c = ModelConfig::desk();
  c.use_diff = false;
  c.seed = 7;
  const ModelConfig back = model_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));

  auto j = to_json(c);
  j["bogus"] = 1;
  CHECK_THROWS_AS(model_config_from_json(j), ConfigError);
  j = to_json(c);
  j["heads"] = 3;
  CHECK_THROWS_AS(model_config_from_json(j), ConfigError);
  j = to_json(c);
  j["embed_dim"] = "wide";
  CHECK_THROWS_AS(model_config_from_json(j), ConfigError);
  j = to_json(c);
  j["scale"] = 3;
  CHECK_THROWS_AS(model_config_from_json(j), ConfigError);
  CHECK_NOTHROW(ModelConfig::full_scale().validate());
}

TEST_CASE("layer is shape preserving and the identity at initialization") {
  Model m(tiny());
  Philox rng(3);
  Tensor x = random_tensor(rng, {2, 8, 8, 16});
  Tensor d = distortion_map(8, 16).tensor(DType::f64);
  const LayerContext ctx = m.context(d);
  Tensor y = m.dal_forward(x, ctx, m.dabs()[0].dals[0]);
  CHECK(y.shape() == x.shape());
  CHECK(bit_equal(y, x));
}

TEST_CASE("layer gradients match finite differences") {
  Model m(tiny());
  Philox rng(4);
  randomize(m.parameters(), rng, 0.1);
  Tensor x = random_tensor(rng, {1, 8, 8, 16}, DType::f64, -1, 1, true);
  Tensor d = distortion_map(8, 16).tensor(DType::f64);
  Tensor weights = random_tensor(rng, {1, 8, 8, 16});
  auto f = [&] {
    const LayerContext ctx = m.context(d);
    return sum(mul(m.dal_forward(x, ctx, m.dabs()[0].dals[0]), weights));
  };
  std::vector<Tensor> inputs = m.parameters().tensors();
  inputs.push_back(x);
  const auto r = grad_check(f, inputs, {.max_coordinates = 600, .seed = 1});
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("block with zeroed branches is the identity") {
  Model m(tiny());
  Philox rng(5);
  Tensor x = random_tensor(rng, {1, 8, 8, 8});
  Tensor d = distortion_map(8, 8).tensor(DType::f64);
  m.dabs()[0].dacb_proj.zero();
  Tensor y = m.dab_forward(x, m.context(d), m.dabs()[0]);
  CHECK(y.shape() == x.shape());
  CHECK(bit_equal(y, x));
}

TEST_CASE("two-block network differentiates end to end") {
  ModelConfig c = tiny();
  c.num_dabs = 2;
  Model m(c);
  Philox rng(6);
  randomize(m.parameters(), rng, 0.1);
  Tensor lr = random_tensor(rng, {1, 3, 4, 8}, DType::f64, 0, 1);
  Tensor weights = random_tensor(rng, {1, 3, 8, 16});
  auto f = [&] { return sum(mul(m.forward(lr), weights)); };
  const auto r = grad_check(f, m.parameters().tensors(), {.max_coordinates = 400, .seed = 2});
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("output extents follow the shape law for every scale") {
  Philox rng(7);
  for (int s : {2, 4, 8, 16}) {
    ModelConfig c = tiny(DType::f32);
    c.scale = s;
    Model m(c);
    for (int trial = 0; trial < 2; ++trial) {
      const auto h = static_cast<std::int64_t>(3 + rng.below(6));
      const auto w = static_cast<std::int64_t>(3 + rng.below(8));
      Tensor lr = random_tensor(rng, {1, 3, h, w}, DType::f32, 0, 1);
      NoGradGuard guard;
      Tensor y = m.forward(lr);
      CHECK(y.shape() == Shape{1, 3, h * s, w * s});
    }
  }
}

TEST_CASE("padding path is transparent on window-divisible inputs") {
  Model m(tiny(DType::f32));
  Philox rng(8);
  randomize(m.parameters(), rng, 0.2);
  Tensor lr = random_tensor(rng, {1, 3, 8, 8}, DType::f32, 0, 1);
  Tensor d = distortion_map(8, 8).tensor(DType::f32);
  NoGradGuard guard;
  // Reference assembled from the public pieces with no padding step.
  const auto& ps = m.parameters();
  auto conv = [&](const std::string& n, const Tensor& x) {
    return conv2d(x, ps.get(n + ".weight"), ps.get(n + ".bias"));
  };
  Tensor x0 = conv("shallow", lr);
  Tensor f = m.dab_forward(x0, m.context(d), m.dabs()[0]);
  Tensor y = add(conv("body_conv", f), x0);
  y = pixel_shuffle(conv("upsample.0", y), 2);
  y = conv("final", y);
  CHECK(bit_equal(m.forward(lr), y));
  CHECK(bit_equal(m.forward(lr, d), y));
}

TEST_CASE("non-divisible inputs are padded and cropped") {
  Model m(tiny(DType::f32));
  Philox rng(9);
  Tensor lr = random_tensor(rng, {2, 3, 5, 7}, DType::f32, 0, 1);
  NoGradGuard guard;
  CHECK(m.forward(lr).shape() == Shape{2, 3, 10, 14});
  Tensor too_small = random_tensor(rng, {1, 3, 2, 7}, DType::f32, 0, 1);
  CHECK_THROWS_AS(m.forward(too_small), DimensionError);
  Tensor wrong_channels = random_tensor(rng, {1, 1, 8, 8}, DType::f32, 0, 1);
  CHECK_THROWS_AS(m.forward(wrong_channels), DimensionError);
}

TEST_CASE("forward is bit-reproducible under a fixed seed") {
  ModelConfig c = ModelConfig::desk();
  c.num_dabs = 1;
  Model a(c), b(c);
  Philox rng(10);
  Tensor lr = random_tensor(rng, {1, 3, 16, 16}, DType::f32, 0, 1);
  NoGradGuard guard;
  CHECK(bit_equal(a.forward(lr), b.forward(lr)));
  c.seed = 1;
  Model other(c);
  CHECK_FALSE(bit_equal(a.parameters().tensors()[0], other.parameters().tensors()[0]));
}

TEST_CASE("ablations change exactly the expected parameters") {
  const auto full = Model(tiny()).parameters().names();
  ModelConfig c = tiny();
  c.use_diff = false;
  CHECK(Model(c).parameters().names() == full);

  c = tiny();
  c.use_guidance = false;
  Model no_dgg(c);
  CHECK_FALSE(has_prefix(no_dgg.parameters(), "dgg."));
  CHECK(has_prefix(no_dgg.parameters(), ".dmrsa."));
  CHECK(has_prefix(Model(tiny()).parameters(), "dgg."));

  c = tiny();
  c.use_ddsa = false;
  Model no_ddsa(c);
  CHECK_FALSE(has_prefix(no_ddsa.parameters(), ".ddsa."));
  CHECK_FALSE(has_prefix(no_ddsa.parameters(), ".dfa."));

  c = tiny();
  c.use_dmrsa = false;
  Model no_dmrsa(c);
  CHECK_FALSE(has_prefix(no_dmrsa.parameters(), ".dmrsa."));
  CHECK_FALSE(has_prefix(no_dmrsa.parameters(), "dgg."));
  CHECK(no_dmrsa.config().pad_multiple_h() == 1);

  c.use_ddsa = false;
  CHECK_THROWS_AS(Model{c}, ConfigError);

  Philox rng(11);
  Tensor lr = random_tensor(rng, {1, 3, 4, 8}, DType::f64, 0, 1);
  NoGradGuard guard;
  for (const Model* m : {&no_dgg, &no_ddsa, &no_dmrsa})
    CHECK(m->forward(lr).shape() == Shape{1, 3, 8, 16});
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  Model m(tiny(DType::f32));
  Philox rng(12);
  randomize(m.parameters(), rng, 0.3);
  const auto p1 = temp_path("a.ckpt"), p2 = temp_path("b.ckpt");
  save_model(m, p1, {CheckpointEntry::from_text("__note__", "hello")});
  Model loaded = load_model(p1);
  for (const auto& [name, t] : m.parameters().entries())
    CHECK(bit_equal(t, loaded.parameters().get(name)));
  save_model(loaded, p2, {CheckpointEntry::from_text("__note__", "hello")});
  CHECK(slurp(p1) == slurp(p2));

  Tensor lr = random_tensor(rng, {1, 3, 8, 8}, DType::f32, 0, 1);
  NoGradGuard guard;
  CHECK(bit_equal(m.forward(lr), loaded.forward(lr)));
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("corrupt or mismatched checkpoints are rejected") {
  Model m(tiny(DType::f32));
  const auto path = temp_path("c.ckpt");
  save_model(m, path);
  const auto bytes = slurp(path);

  auto write = [&](const std::vector<char>& b) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write(b.data(), static_cast<std::streamsize>(b.size()));
  };

  write({bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() / 2)});
  CHECK_THROWS_AS(load_model(path), IntegrityError);

  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  write(flipped);
  CHECK_THROWS_AS(load_model(path), IntegrityError);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  write(bad_magic);
  CHECK_THROWS_AS(load_model(path), FormatError);

  // Version field, re-sealed with a valid CRC by rewriting through the API.
  write(bytes);
  auto entries = read_checkpoint(path);
  std::vector<CheckpointEntry> partial(entries.begin(), entries.end() - 1);
  write_checkpoint(path, partial);
  try {
    load_model(path);
    FAIL("missing tensor accepted");
  } catch (const IntegrityError& e) {
    CHECK(std::string(e.what()).find(entries.back().name) != std::string::npos);
  }

  ModelConfig wide = tiny(DType::f32);
  wide.embed_dim = 16;
  Model other(wide);
  try {
    load_parameters(other, entries);
    FAIL("config mismatch accepted");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("embed_dim") != std::string::npos);
    CHECK(msg.find("8") != std::string::npos);
    CHECK(msg.find("16") != std::string::npos);
  }

  CHECK_THROWS_AS(read_checkpoint(temp_path("missing.ckpt")), IoError);
  std::filesystem::remove(path);
}
