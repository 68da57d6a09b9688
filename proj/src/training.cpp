// SPDX-License-Identifier: Apache-2.0
#include "odisr/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <set>

#include "odisr/erp.hpp"
#include "odisr/error.hpp"
#include "odisr/metrics.hpp"
#include "odisr/ops.hpp"

namespace odisr {

namespace {

constexpr std::uint64_t kDataStream = 0x64617461;  // "data"

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid training config: " + what);
}

}  // namespace

// ---- configuration -------------------------------------------------------

void TrainConfig::validate() const {
  require(lr0 > 0 && std::isfinite(lr0), "lr0 must be positive");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "betas must lie in [0, 1)");
  require(eps > 0, "eps must be positive");
  require(iterations >= 1, "iterations must be at least 1");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    require(milestones[i] > 0 && milestones[i] < 1, "milestones must lie in (0, 1)");
    require(i == 0 || milestones[i] > milestones[i - 1], "milestones must be strictly increasing");
  }
  require(batch >= 1, "batch must be at least 1");
  require(patch >= 1, "patch must be at least 1");
  require(log_every >= 1, "log_every must be at least 1");
  require(checkpoint_every >= 0, "checkpoint_every must not be negative");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr0", c.lr0},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"iterations", c.iterations},
          {"milestones", c.milestones},
          {"batch", c.batch},
          {"patch", c.patch},
          {"seed", c.seed},
          {"log_every", c.log_every},
          {"checkpoint_every", c.checkpoint_every},
          {"raw_loss", c.raw_loss},
          {"hflip", c.hflip}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  TrainConfig c;
  const nlohmann::json defaults = to_json(c);
  for (const auto& [key, value] : j.items())
    if (!defaults.contains(key)) throw ConfigError("unknown training config key '" + key + "'");
  auto read = [&](const char* key, auto& out) {
    if (!j.contains(key)) return;
    try {
      out = j.at(key).get<std::decay_t<decltype(out)>>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string("training config field '") + key + "' has the wrong type");
    }
  };
  read("lr0", c.lr0);
  read("beta1", c.beta1);
  read("beta2", c.beta2);
  read("eps", c.eps);
  read("iterations", c.iterations);
  read("milestones", c.milestones);
  read("batch", c.batch);
  read("patch", c.patch);
  read("seed", c.seed);
  read("log_every", c.log_every);
  read("checkpoint_every", c.checkpoint_every);
  read("raw_loss", c.raw_loss);
  read("hflip", c.hflip);
  c.validate();
  return c;
}

double lr_at(int iter, const TrainConfig& cfg) {
  if (iter < 0 || iter > cfg.iterations)
    throw RangeError("iteration " + std::to_string(iter) + " outside [0, " + std::to_string(cfg.iterations) + "]");
  double lr = cfg.lr0;
  for (double f : cfg.milestones)
    if (iter >= std::llround(f * cfg.iterations)) lr *= 0.5;
  return lr;
}

// ---- optimizer -----------------------------------------------------------

Adam::Adam(const ParameterSet& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, t] : params.entries()) {
    names_.push_back(name);
    m_.push_back(Tensor::zeros(t.shape(), t.dtype()));
    v_.push_back(Tensor::zeros(t.shape(), t.dtype()));
  }
}

void Adam::step(ParameterSet& params, double lr, int iteration) {
  const auto& entries = params.entries();
  if (entries.size() != names_.size()) throw ConfigError("optimizer built for a different parameter set");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Tensor& t = entries[i].second;
    if (!t.has_grad()) continue;
    dispatch(t.dtype(), [&]<typename T>() {
      for (T g : t.grad_buffer().template view<T>())
        if (!std::isfinite(g))
          throw NumericError("non-finite gradient in '" + entries[i].first + "' at iteration " +
                             std::to_string(iteration));
    });
  }
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor p = entries[i].second;
    dispatch(p.dtype(), [&]<typename T>() {
      auto w = p.template mutable_data<T>();
      auto m = m_[i].template mutable_data<T>();
      auto v = v_[i].template mutable_data<T>();
      std::span<const T> g;
      if (p.has_grad()) g = p.grad_buffer().template view<T>();
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = g.empty() ? 0.0 : static_cast<double>(g[k]);
        const double mk = beta1_ * m[k] + (1.0 - beta1_) * gk;
        const double vk = beta2_ * v[k] + (1.0 - beta2_) * gk * gk;
        m[k] = static_cast<T>(mk);
        v[k] = static_cast<T>(vk);
        const double update = lr * (mk / c1) / (std::sqrt(vk / c2) + eps_);
        w[k] = static_cast<T>(w[k] - update);
      }
    });
  }
}

std::vector<CheckpointEntry> Adam::state_entries() const {
  std::vector<CheckpointEntry> out;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    out.push_back(CheckpointEntry::from_tensor("__adam_m__." + names_[i], m_[i]));
    out.push_back(CheckpointEntry::from_tensor("__adam_v__." + names_[i], v_[i]));
  }
  out.push_back(CheckpointEntry::from_text("__adam_step__", std::to_string(step_)));
  return out;
}

void Adam::load_state(const std::vector<CheckpointEntry>& entries) {
  auto find = [&](const std::string& name) -> const CheckpointEntry& {
    for (const auto& e : entries)
      if (e.name == name) return e;
    throw IntegrityError("checkpoint has no optimizer entry '" + name + "'");
  };
  std::vector<Tensor> m, v;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    m.push_back(find("__adam_m__." + names_[i]).to_tensor());
    v.push_back(find("__adam_v__." + names_[i]).to_tensor());
    if (m.back().shape() != m_[i].shape() || v.back().shape() != v_[i].shape() ||
        m.back().dtype() != m_[i].dtype() || v.back().dtype() != v_[i].dtype())
      throw IntegrityError("optimizer state for '" + names_[i] + "' does not match the parameter");
  }
  const std::string step_text = find("__adam_step__").to_text();
  try {
    step_ = std::stoll(step_text);
  } catch (const std::exception&) {
    throw IntegrityError("optimizer step '" + step_text + "' is not an integer");
  }
  m_ = std::move(m);
  v_ = std::move(v);
}

// ---- data ----------------------------------------------------------------

Dataset make_dataset(const std::vector<std::pair<std::string, Image8>>& hr, int scale, DType dtype) {
  if (scale < 1) throw ConfigError("scale must be positive");
  Dataset data;
  data.scale = scale;
  for (const auto& [name, image] : hr) {
    const std::int64_t h = image.height / scale * scale, w = image.width / scale * scale;
    if (h == 0 || w == 0) {
      std::cerr << "warning: skipping " << name << ": smaller than the scale factor\n";
      continue;
    }
    Tensor full = image_to_tensor(image, DType::f64);
    Tensor hr_t = narrow(narrow(full, 2, 0, h), 3, 0, w).detach();
    Tensor lr_t = image_to_tensor(tensor_to_image(bicubic_resize(hr_t, {1, scale})), dtype);
    data.items.push_back({name, hr_t.to(dtype), lr_t});
  }
  return data;
}

Dataset load_dataset(const std::filesystem::path& dir, int scale, DType dtype) {
  if (!std::filesystem::is_directory(dir)) throw IoError("data directory " + dir.string() + " not found");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no PNG images in " + dir.string());
  std::vector<std::pair<std::string, Image8>> images;
  for (const auto& f : files) images.emplace_back(f.filename().string(), read_png(f));
  return make_dataset(images, scale, dtype);
}

Dataset synthetic_dataset(int count, int size, int scale, std::uint64_t seed, DType dtype) {
  Philox rng(seed, 0x73796e74);  // "synt"
  std::vector<std::pair<std::string, Image8>> images;
  const double two_pi = 2 * std::numbers::pi;
  for (int n = 0; n < count; ++n) {
    Image8 img{size, size, std::vector<std::uint8_t>(static_cast<std::size_t>(size * size * 3))};
    struct Wave { double fy, fx, phase, amp; };
    std::vector<Wave> waves[3];
    double base[3];
    for (int ch = 0; ch < 3; ++ch) {
      base[ch] = 0.3 + 0.4 * rng.uniform();
      for (int k = 0; k < 3; ++k)
        waves[ch].push_back({std::floor(rng.uniform() * 4), std::floor(rng.uniform() * 4),
                             two_pi * rng.uniform(), 0.08 + 0.1 * rng.uniform()});
    }
    // One soft diagonal edge gives every image a sharp-ish feature to restore.
    const double ey = rng.uniform(), ex = rng.uniform(), angle = two_pi * rng.uniform();
    const double edge_amp = 0.15 + 0.1 * rng.uniform();
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double u = static_cast<double>(y) / size, v = static_cast<double>(x) / size;
        const double side = std::tanh(((u - ey) * std::cos(angle) + (v - ex) * std::sin(angle)) * 24.0);
        for (int ch = 0; ch < 3; ++ch) {
          double val = base[ch] + edge_amp * side * (ch == 1 ? -1.0 : 1.0);
          for (const auto& w : waves[ch]) val += w.amp * std::sin(two_pi * (w.fy * u + w.fx * v) + w.phase);
          val = std::clamp(val, 0.0, 1.0);
          img.pixels[static_cast<std::size_t>((y * size + x) * 3 + ch)] =
              static_cast<std::uint8_t>(std::lround(val * 255.0));
        }
      }
    images.emplace_back("synthetic_" + std::to_string(n), std::move(img));
  }
  return make_dataset(images, scale, dtype);
}

namespace {

// Copies a [c, size, size] window of a [1, c, H, W] tensor into `out`.
void append_crop(const Tensor& src, std::int64_t y, std::int64_t x, std::int64_t size, bool flip,
                 std::vector<double>& out) {
  const std::int64_t c = src.dim(1), W = src.dim(3), H = src.dim(2);
  dispatch(src.dtype(), [&]<typename T>() {
    auto d = src.data<T>();
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t r = 0; r < size; ++r)
        for (std::int64_t col = 0; col < size; ++col) {
          const std::int64_t sc = flip ? x + size - 1 - col : x + col;
          out.push_back(static_cast<double>(d[static_cast<std::size_t>((ch * H + y + r) * W + sc)]));
        }
  });
}

std::vector<std::size_t> eligible_images(const Dataset& data, int patch) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < data.items.size(); ++i)
    if (data.items[i].lr.dim(2) >= patch && data.items[i].lr.dim(3) >= patch) out.push_back(i);
  return out;
}

}  // namespace

PatchBatch sample_patches(const Dataset& data, int patch, int batch, Philox& rng, bool hflip) {
  const auto eligible = eligible_images(data, patch);
  if (eligible.empty())
    throw DimensionError("no training image is at least " + std::to_string(patch) + " pixels (LR) on each side");
  const std::int64_t p = patch, s = data.scale, ps = p * s;
  const DType dt = data.items[eligible[0]].lr.dtype();
  PatchBatch out;
  std::vector<double> lr, hr, dl, dh;
  for (int n = 0; n < batch; ++n) {
    Crop c;
    c.image = eligible[rng.below(eligible.size())];
    const auto& item = data.items[c.image];
    const std::int64_t h = item.lr.dim(2), w = item.lr.dim(3);
    c.y = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(h - p + 1)));
    c.x = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(w - p + 1)));
    c.flipped = hflip && rng.below(2) == 1;
    append_crop(item.lr, c.y, c.x, p, c.flipped, lr);
    append_crop(item.hr, c.y * s, c.x * s, ps, c.flipped, hr);
    const auto lr_map = distortion_map(h, w).tensor(DType::f64, c.y, p, c.x, p).to_vector();
    const auto hr_map = distortion_map(h * s, w * s).tensor(DType::f64, c.y * s, ps, c.x * s, ps).to_vector();
    dl.insert(dl.end(), lr_map.begin(), lr_map.end());
    dh.insert(dh.end(), hr_map.begin(), hr_map.end());
    out.crops.push_back(c);
  }
  out.lr = Tensor::from_values({batch, 3, p, p}, lr, dt);
  out.hr = Tensor::from_values({batch, 3, ps, ps}, hr, dt);
  out.lr_distortion = Tensor::from_values({batch, 1, p, p}, dl, dt);
  out.hr_distortion = Tensor::from_values({batch, 1, ps, ps}, dh, dt);
  return out;
}

double dataset_loss(const Model& model, const Dataset& data, bool raw) {
  if (data.items.empty()) throw ConfigError("dataset is empty");
  NoGradGuard guard;
  double total = 0;
  for (const auto& item : data.items) {
    Tensor out = model.forward(item.lr);
    Tensor d = distortion_map(item.hr.dim(2), item.hr.dim(3)).tensor(item.hr.dtype());
    total += ws_l1(out, item.hr, d, !raw).item();
  }
  return total / static_cast<double>(data.items.size());
}

// ---- loop ----------------------------------------------------------------

namespace {

struct LoopState {
  int next_iteration = 0;
  double initial_eval_loss = 0;
  double best_eval_loss = 0;
  int best_iteration = 0;
};

CheckpointEntry state_entry(const LoopState& s, const Philox& rng, const TrainConfig& cfg) {
  nlohmann::json j{{"next_iteration", s.next_iteration},
                   {"initial_eval_loss", s.initial_eval_loss},
                   {"best_eval_loss", s.best_eval_loss},
                   {"best_iteration", s.best_iteration},
                   {"rng_seed", rng.seed()},
                   {"rng_stream", rng.stream()},
                   {"rng_position", rng.position()},
                   {"train_config", to_json(cfg)}};
  return CheckpointEntry::from_text(kTrainStateEntry, j.dump());
}

void save_state(const std::filesystem::path& path, const Model& model, const Adam& adam, const LoopState& s,
                const Philox& rng, const TrainConfig& cfg) {
  auto extra = adam.state_entries();
  extra.push_back(state_entry(s, rng, cfg));
  save_model(model, path, extra);
}

}  // namespace

TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  if (data.scale != model.config().scale)
    throw ConfigError("dataset scale " + std::to_string(data.scale) + " does not match model scale " +
                      std::to_string(model.config().scale));
  const auto eligible = eligible_images(data, cfg.patch);
  if (eligible.size() < data.items.size())
    std::cerr << "warning: " << data.items.size() - eligible.size() << " image(s) smaller than the "
              << cfg.patch << " px LR patch are skipped\n";

  Adam adam(model.parameters(), cfg.beta1, cfg.beta2, cfg.eps);
  Philox rng(cfg.seed, kDataStream);
  LoopState state;
  const bool write = !opts.out_dir.empty();
  if (write) std::filesystem::create_directories(opts.out_dir);
  const auto csv_path = opts.out_dir / "loss.csv";
  const auto best_path = opts.out_dir / "best.ckpt";
  const auto final_path = opts.out_dir / "final.ckpt";
  const auto last_path = opts.out_dir / "last.ckpt";

  if (opts.resume) {
    const auto entries = read_checkpoint(*opts.resume);
    load_parameters(model, entries);
    adam.load_state(entries);
    nlohmann::json j;
    bool found = false;
    for (const auto& e : entries)
      if (e.name == kTrainStateEntry) {
        j = nlohmann::json::parse(e.to_text());
        found = true;
      }
    if (!found) throw IntegrityError("checkpoint " + opts.resume->string() + " has no training state");
    if (j.at("train_config") != to_json(cfg))
      throw ConfigError("training config differs from the one the checkpoint was written with");
    state.next_iteration = j.at("next_iteration").get<int>();
    state.initial_eval_loss = j.at("initial_eval_loss").get<double>();
    state.best_eval_loss = j.at("best_eval_loss").get<double>();
    state.best_iteration = j.at("best_iteration").get<int>();
    rng.seek(j.at("rng_position").get<std::uint64_t>());
  } else {
    state.initial_eval_loss = dataset_loss(model, data, cfg.raw_loss);
    state.best_eval_loss = state.initial_eval_loss;
    if (write) {
      std::ofstream(csv_path, std::ios::trunc) << "iter,lr,ws_l1,eval_ws_l1\n";
      save_state(best_path, model, adam, state, rng, cfg);
    }
  }

  std::ofstream csv;
  if (write) {
    csv.open(csv_path, std::ios::app);
    if (!csv) throw IoError("cannot open " + csv_path.string());
    csv.precision(17);
  }

  TrainResult result;
  result.initial_eval_loss = state.initial_eval_loss;
  const int start = state.next_iteration;
  for (int it = start; it < cfg.iterations; ++it) {
    if (opts.stop_after && it - start == *opts.stop_after) {
      state.next_iteration = it;
      if (write) save_state(last_path, model, adam, state, rng, cfg);
      result.next_iteration = it;
      result.best_eval_loss = state.best_eval_loss;
      result.best_iteration = state.best_iteration;
      return result;
    }
    TrainRecord rec;
    rec.iteration = it;
    rec.lr = lr_at(it, cfg);
    const PatchBatch b = sample_patches(data, cfg.patch, cfg.batch, rng, cfg.hflip);
    Tensor loss = ws_l1(model.forward(b.lr, b.lr_distortion), b.hr, b.hr_distortion, !cfg.raw_loss);
    rec.loss = loss.item();
    if (!std::isfinite(rec.loss)) {
      if (write) csv << it << ',' << rec.lr << ',' << rec.loss << ",\n";
      csv.close();
      throw NumericError("non-finite loss at iteration " + std::to_string(it) +
                         (write ? "; trace written to " + csv_path.string() : std::string()));
    }
    loss.backward();
    adam.step(model.parameters(), rec.lr, it);
    model.parameters().zero_grad();

    state.next_iteration = it + 1;
    if ((it + 1) % cfg.log_every == 0 || it + 1 == cfg.iterations) {
      rec.eval_loss = dataset_loss(model, data, cfg.raw_loss);
      if (rec.eval_loss < state.best_eval_loss) {
        state.best_eval_loss = rec.eval_loss;
        state.best_iteration = it + 1;
        if (write) save_state(best_path, model, adam, state, rng, cfg);
      }
      if (opts.on_log) opts.on_log(rec);
    }
    if (write) {
      csv << it << ',' << rec.lr << ',' << rec.loss << ',';
      if (rec.eval_loss >= 0) csv << rec.eval_loss;
      csv << '\n';
      csv.flush();
    }
    result.trace.push_back(rec);
    if (write && cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0)
      save_state(last_path, model, adam, state, rng, cfg);
  }

  state.next_iteration = cfg.iterations;
  if (write) {
    save_state(final_path, model, adam, state, rng, cfg);
    result.final_checkpoint = final_path;
    result.best_checkpoint = best_path;
  }
  result.final_eval_loss =
      result.trace.empty() ? dataset_loss(model, data, cfg.raw_loss) : result.trace.back().eval_loss;
  result.best_eval_loss = state.best_eval_loss;
  result.best_iteration = state.best_iteration;
  result.next_iteration = cfg.iterations;
  return result;
}

}  // namespace odisr
