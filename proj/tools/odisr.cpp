// SPDX-License-Identifier: Apache-2.0
//
// odisr: distortion maps, training, inference, evaluation, gradient checks
// and guidance dumps. Exit codes: 0 success, 2 usage or config, 3 I/O,
// 4 numeric failure. Every command writes a JSON run manifest.
#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "odisr/erp.hpp"
#include "odisr/error.hpp"
#include "odisr/gradcheck_suite.hpp"
#include "odisr/image_io.hpp"
#include "odisr/inference.hpp"
#include "odisr/metrics.hpp"
#include "odisr/model.hpp"
#include "odisr/ops.hpp"
#include "odisr/training.hpp"

#ifndef ODISR_VERSION
#define ODISR_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace odisr;

namespace {

constexpr int kManifestSchema = 1;

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

/// Bookkeeping for one invocation, serialized as the run manifest.
struct Run {
  std::string command;
  std::vector<std::string> args;
  json config = json::object();
  std::uint64_t seed = 0;
  std::vector<std::string> inputs, outputs;
  std::optional<fs::path> manifest_path;
  std::string started = utc_now();

  void input(const fs::path& p) { inputs.push_back(p.string()); }
  void output(const fs::path& p) { outputs.push_back(p.string()); }

  void write(int exit_code, const std::string& error) const {
    json m = {{"schema_version", kManifestSchema},
              {"command", command},
              {"args", args},
              {"config", config},
              {"config_hash", fnv1a(config.dump())},
              {"seed", seed},
              {"code_version", ODISR_VERSION},
              {"started", started},
              {"finished", utc_now()},
              {"inputs", inputs},
              {"outputs", outputs},
              {"exit_code", exit_code}};
    if (!error.empty()) m["error"] = error;
    if (!manifest_path) {
      std::cerr << "manifest: " << m.dump() << "\n";
      return;
    }
    try {
      if (manifest_path->has_parent_path()) fs::create_directories(manifest_path->parent_path());
      std::ofstream os(*manifest_path);
      os << m.dump(2) << "\n";
      if (!os) throw IoError("cannot write " + manifest_path->string());
    } catch (const std::exception& e) {
      std::cerr << "odisr: warning: manifest not written: " << e.what() << "\n";
    }
  }
};

fs::path sidecar(const fs::path& p) { return fs::path(p.string() + ".manifest.json"); }

std::string read_text(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Parses JSON, reporting syntax errors as path:line:column.
json parse_json_file(const fs::path& p) {
  const std::string text = read_text(p);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t at = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < at; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string what = e.what();
    if (auto k = what.find("syntax error"); k != std::string::npos) what = what.substr(k);
    throw ConfigError(p.string() + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + what);
  }
}

// ---- distmap -------------------------------------------------------------

struct DistmapArgs {
  std::int64_t height = 0, width = 0;
  std::string out;
};

void cmd_distmap(const DistmapArgs& a, Run& run) {
  run.config = {{"height", a.height}, {"width", a.width}};
  if (!a.out.empty()) run.manifest_path = run.manifest_path.value_or(fs::path(a.out + ".manifest.json"));
  const DistortionMap map = distortion_map(a.height, a.width);
  for (std::int64_t r = 0; r < map.height(); ++r) std::printf("%" PRId64 " %.17g\n", r, map.row_weight(r));
  if (a.out.empty()) return;
  const fs::path png = a.out + ".png", raw = a.out + ".raw";
  if (png.has_parent_path()) fs::create_directories(png.parent_path());
  write_distortion_png(map, png);
  write_distortion_raw(map, raw);
  run.output(png);
  run.output(raw);
}

// ---- infer ---------------------------------------------------------------

struct InferArgs {
  std::string checkpoint, in, out;
  int scale = 0;
  std::int64_t tile = 64;
};

Model load_for_scale(const fs::path& checkpoint, int scale) {
  Model model = load_model(checkpoint);
  if (model.config().scale != scale)
    throw ConfigError("checkpoint is a x" + std::to_string(model.config().scale) + " model but --scale is " +
                      std::to_string(scale));
  return model;
}

void cmd_infer(const InferArgs& a, Run& run) {
  run.config = {{"scale", a.scale}, {"tile", a.tile}, {"overlap", 16}};
  run.manifest_path = run.manifest_path.value_or(sidecar(a.out));
  run.input(a.checkpoint);
  run.input(a.in);
  const Model model = load_for_scale(a.checkpoint, a.scale);
  run.seed = model.config().seed;
  const Image8 lr = read_png(a.in);
  const Image8 sr = super_resolve(model, lr, {.tile = a.tile, .overlap = 16});
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  write_png(a.out, sr);
  run.output(a.out);
  std::printf("%s: %" PRId64 "x%" PRId64 " -> %" PRId64 "x%" PRId64 "\n", a.out.c_str(), lr.width, lr.height,
              sr.width, sr.height);
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out, resume;
  int synthetic = 0;
  int synthetic_size = 64;
  bool raw_loss = false, hflip = false;
  std::optional<int> stop_after;
};

void cmd_train(const TrainArgs& a, Run& run) {
  run.manifest_path = run.manifest_path.value_or(fs::path(a.out) / "manifest.json");
  json cfg = json::object();
  if (!a.config.empty()) {
    cfg = parse_json_file(a.config);
    run.input(a.config);
    if (!cfg.is_object()) throw ConfigError(a.config + ": top level must be an object");
    for (const auto& [key, value] : cfg.items())
      if (key != "model" && key != "train") throw ConfigError(a.config + ": unknown key '" + key + "'");
  }
  const ModelConfig mc = model_config_from_json(cfg.value("model", json::object()));
  TrainConfig tc = train_config_from_json(cfg.value("train", json::object()));
  tc.raw_loss = tc.raw_loss || a.raw_loss;
  tc.hflip = tc.hflip || a.hflip;
  mc.validate();
  tc.validate();
  run.config = {{"model", to_json(mc)}, {"train", to_json(tc)}};
  run.seed = tc.seed;

  if (a.data.empty() == (a.synthetic == 0)) throw ConfigError("give exactly one of --data and --synthetic");
  Dataset data;
  if (!a.data.empty()) {
    data = load_dataset(a.data, mc.scale, mc.dtype);
    for (const auto& item : data.items) run.input(fs::path(a.data) / item.name);
  } else {
    data = synthetic_dataset(a.synthetic, a.synthetic_size, mc.scale, tc.seed, mc.dtype);
  }

  TrainOptions opts;
  opts.out_dir = a.out;
  if (!a.resume.empty()) {
    opts.resume = fs::path(a.resume);
    run.input(a.resume);
  }
  opts.stop_after = a.stop_after;
  opts.on_log = [](const TrainRecord& r) {
    if (r.eval_loss >= 0)
      std::printf("iter %d lr %.3e loss %.6f eval %.6f\n", r.iteration, r.lr, r.loss, r.eval_loss);
    std::fflush(stdout);
  };
  Model model(mc);
  const TrainResult res = train(model, data, tc, opts);
  for (const char* name : {"loss.csv", "best.ckpt", "final.ckpt", "last.ckpt"})
    if (fs::exists(fs::path(a.out) / name)) run.output(fs::path(a.out) / name);
  std::printf("eval ws_l1 initial %.6f final %.6f best %.6f at %d\n", res.initial_eval_loss, res.final_eval_loss,
              res.best_eval_loss, res.best_iteration);
}

// ---- eval ----------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, hr_dir, report;
  int scale = 0;
  std::int64_t tile = 64;
};

json metric_value(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

json report_json(const MetricReport& r) {
  return {{"psnr", metric_value(r.psnr)},
          {"ssim", metric_value(r.ssim)},
          {"ws_psnr", metric_value(r.ws_psnr)},
          {"ws_ssim", metric_value(r.ws_ssim)}};
}

std::string cell(double v) {
  if (std::isinf(v)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void cmd_eval(const EvalArgs& a, Run& run) {
  run.config = {{"scale", a.scale}, {"tile", a.tile}};
  if (!a.report.empty()) run.manifest_path = run.manifest_path.value_or(sidecar(a.report));
  if (a.scale < 1) throw ConfigError("--scale must be at least 1");
  std::optional<Model> model;
  if (a.scale == 1) {
    if (!a.checkpoint.empty()) throw ConfigError("--scale 1 compares HR with itself and takes no checkpoint");
  } else {
    if (a.checkpoint.empty()) throw ConfigError("--checkpoint is required for --scale above 1");
    model.emplace(load_for_scale(a.checkpoint, a.scale));
    run.input(a.checkpoint);
    run.seed = model->config().seed;
  }
  if (!fs::is_directory(a.hr_dir)) throw IoError("not a directory: " + a.hr_dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.hr_dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no PNG images in " + a.hr_dir);

  json images = json::array();
  std::vector<MetricReport> reports;
  std::printf("%-24s %9s %7s %9s %7s\n", "image", "psnr", "ssim", "ws_psnr", "ws_ssim");
  for (const auto& f : files) {
    run.input(f);
    Image8 hr = read_png(f);
    Image8 sr;
    if (!model) {
      sr = hr;
    } else {
      const std::int64_t s = a.scale;
      Tensor t = image_to_tensor(hr, DType::f64);
      t = narrow(narrow(t, 2, 0, hr.height / s * s), 3, 0, hr.width / s * s);
      hr = tensor_to_image(t);
      const Image8 lr = tensor_to_image(bicubic_resize(t, {1, s}));
      sr = super_resolve(*model, lr, {.tile = a.tile, .overlap = 16});
    }
    const MetricReport r = evaluate(sr, hr);
    reports.push_back(r);
    json entry = report_json(r);
    entry["image"] = f.filename().string();
    images.push_back(entry);
    std::printf("%-24s %9s %7s %9s %7s\n", f.filename().string().c_str(), cell(r.psnr).c_str(),
                cell(r.ssim).c_str(), cell(r.ws_psnr).c_str(), cell(r.ws_ssim).c_str());
  }
  const MetricSummary sum = summarize(reports);
  std::printf("%-24s %9s %7s %9s %7s\n", "mean", cell(sum.mean.psnr).c_str(), cell(sum.mean.ssim).c_str(),
              cell(sum.mean.ws_psnr).c_str(), cell(sum.mean.ws_ssim).c_str());
  if (sum.infinite_psnr + sum.infinite_ws_psnr > 0)
    std::printf("%zu image(s) with infinite PSNR and %zu with infinite WS-PSNR left out of the means\n",
                sum.infinite_psnr, sum.infinite_ws_psnr);
  if (a.report.empty()) return;
  json rep = {{"scale", a.scale},
              {"images", images},
              {"mean", report_json(sum.mean)},
              {"count", sum.images},
              {"infinite_psnr", sum.infinite_psnr},
              {"infinite_ws_psnr", sum.infinite_ws_psnr}};
  if (fs::path(a.report).has_parent_path()) fs::create_directories(fs::path(a.report).parent_path());
  std::ofstream os(a.report);
  os << rep.dump(2) << "\n";
  if (!os) throw IoError("cannot write " + a.report);
  run.output(a.report);
}

// ---- gradcheck -----------------------------------------------------------

struct GradcheckArgs {
  std::string module = "all";
};

/// Returns the number of failing cases.
int cmd_gradcheck(const GradcheckArgs& a, Run& run) {
  run.config = {{"module", a.module}, {"tolerance", 1e-4}, {"step", 1e-5}};
  int failures = 0;
  for (const auto& c : gradcheck_suite(a.module)) {
    const auto t0 = std::chrono::steady_clock::now();
    const GradCheckResult r = c.run();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool ok = r.max_rel_error < 1e-4 && r.skipped * 20 <= r.coordinates;
    failures += ok ? 0 : 1;
    std::printf("%-4s %-10s %-32s max_rel_error %.3e coordinates %zu skipped %zu %.2fs\n", ok ? "PASS" : "FAIL",
                c.module.c_str(), c.name.c_str(), r.max_rel_error, r.coordinates, r.skipped, secs);
    std::fflush(stdout);
  }
  return failures;
}

// ---- dgg-dump ------------------------------------------------------------

struct DggDumpArgs {
  std::string checkpoint, out;
  std::int64_t height = 64, width = 128;
};

void cmd_dgg_dump(const DggDumpArgs& a, Run& run) {
  run.config = {{"height", a.height}, {"width", a.width}};
  run.manifest_path = run.manifest_path.value_or(fs::path(a.out + ".manifest.json"));
  run.input(a.checkpoint);
  const Model model = load_model(a.checkpoint);
  run.seed = model.config().seed;
  if (!model.config().use_dmrsa || !model.config().use_guidance)
    throw ConfigError("checkpoint has no distortion guidance generator");
  const DistortionMap map = distortion_map(a.height, a.width);
  Tensor g;
  {
    NoGradGuard no_grad;
    g = model.guidance(map.tensor(model.config().dtype));
  }
  const auto v = g.to_vector();
  const std::int64_t c = g.dim(1), h = a.height, w = a.width;

  const fs::path csv = a.out + ".csv", png = a.out + ".png";
  if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
  std::ofstream os(csv);
  os << "row,distortion";
  for (std::int64_t k = 0; k < c; ++k) os << ",g" << k;
  os << "\n";
  std::vector<double> row_mean(static_cast<std::size_t>(h), 0.0);
  char buf[32];
  for (std::int64_t r = 0; r < h; ++r) {
    std::snprintf(buf, sizeof buf, "%.17g", map.row_weight(r));
    os << r << "," << buf;
    for (std::int64_t k = 0; k < c; ++k) {
      const double x = v[static_cast<std::size_t>((k * h + r) * w)];
      row_mean[static_cast<std::size_t>(r)] += x / static_cast<double>(c);
      std::snprintf(buf, sizeof buf, "%.9g", x);
      os << "," << buf;
    }
    os << "\n";
  }
  if (!os) throw IoError("cannot write " + csv.string());
  run.output(csv);

  // Channel-mean guidance, min-max stretched to 16 bits.
  const auto [lo, hi] = std::minmax_element(row_mean.begin(), row_mean.end());
  const double span = *hi - *lo;
  Image16 img{h, w, std::vector<std::uint16_t>(static_cast<std::size_t>(h * w))};
  for (std::int64_t r = 0; r < h; ++r) {
    const double u = span > 0 ? (row_mean[static_cast<std::size_t>(r)] - *lo) / span : 0.0;
    std::fill_n(img.pixels.begin() + r * w, w, static_cast<std::uint16_t>(std::lround(u * 65535.0)));
  }
  write_png16(png, img);
  run.output(png);
  std::printf("guidance of %" PRId64 " channels over %" PRId64 " rows: mean range [%.6g, %.6g]\n", c, h, *lo, *hi);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DimensionError*>(&e) ||
      dynamic_cast<const RangeError*>(&e))
    return 2;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const IntegrityError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e))
    return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distortion-aware super-resolution for equirectangular images"};
  app.require_subcommand(1);
  std::string manifest;
  app.add_option("--manifest", manifest, "Write the run manifest here instead of the default location");

  DistmapArgs dm;
  auto* distmap = app.add_subcommand("distmap", "Print and export the per-row distortion map");
  distmap->add_option("--height", dm.height, "Image height")->required();
  distmap->add_option("--width", dm.width, "Image width")->required();
  distmap->add_option("--out", dm.out, "Write PREFIX.png (16-bit) and PREFIX.raw");

  InferArgs in;
  auto* infer = app.add_subcommand("infer", "Super-resolve one PNG");
  infer->add_option("--checkpoint", in.checkpoint)->required();
  infer->add_option("--in", in.in)->required();
  infer->add_option("--out", in.out)->required();
  infer->add_option("--scale", in.scale)->required();
  infer->add_option("--tile", in.tile, "LR tile edge, 0 for whole-image inference")->capture_default_str();

  TrainArgs tr;
  auto* trainc = app.add_subcommand("train", "Train a model");
  trainc->add_option("--config", tr.config, "JSON with optional \"model\" and \"train\" objects");
  trainc->add_option("--data", tr.data, "Directory of HR PNG images");
  trainc->add_option("--synthetic", tr.synthetic, "Use this many synthetic images instead of --data");
  trainc->add_option("--synthetic-size", tr.synthetic_size)->capture_default_str();
  trainc->add_option("--out", tr.out)->required();
  trainc->add_option("--resume", tr.resume, "Checkpoint written by an interrupted run");
  trainc->add_option("--stop-after", tr.stop_after, "Stop after this many iterations and write last.ckpt");
  trainc->add_flag("--raw-loss", tr.raw_loss, "Use the unnormalized weighted l1 sum");
  trainc->add_flag("--hflip", tr.hflip, "Random horizontal flips");

  EvalArgs ev;
  auto* evalc = app.add_subcommand("eval", "PSNR, SSIM, WS-PSNR and WS-SSIM over a directory");
  evalc->add_option("--checkpoint", ev.checkpoint);
  evalc->add_option("--hr-dir", ev.hr_dir)->required();
  evalc->add_option("--scale", ev.scale, "1 compares each image with itself")->required();
  evalc->add_option("--tile", ev.tile)->capture_default_str();
  evalc->add_option("--report", ev.report, "JSON report path");

  GradcheckArgs gc;
  auto* gradc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradc->add_option("--module", gc.module, "One of all, " + [] {
    std::string s;
    for (const auto& m : gradcheck_modules()) s += (s.empty() ? "" : ", ") + m;
    return s;
  }())->capture_default_str();

  DggDumpArgs dd;
  auto* dggc = app.add_subcommand("dgg-dump", "Export the distortion guidance of a checkpoint");
  dggc->add_option("--checkpoint", dd.checkpoint)->required();
  dggc->add_option("--out", dd.out, "Writes PREFIX.csv and PREFIX.png")->required();
  dggc->add_option("--height", dd.height)->capture_default_str();
  dggc->add_option("--width", dd.width)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  Run run;
  run.command = app.get_subcommands().front()->get_name();
  run.args.assign(argv + 1, argv + argc);
  if (!manifest.empty()) run.manifest_path = fs::path(manifest);

  int code = 0;
  std::string error;
  try {
    if (distmap->parsed()) cmd_distmap(dm, run);
    if (infer->parsed()) cmd_infer(in, run);
    if (trainc->parsed()) cmd_train(tr, run);
    if (evalc->parsed()) cmd_eval(ev, run);
    if (gradc->parsed() && cmd_gradcheck(gc, run) > 0) {
      code = 4;
      error = "gradient check failed";
    }
    if (dggc->parsed()) cmd_dgg_dump(dd, run);
  } catch (const std::exception& e) {
    code = exit_code_for(e);
    error = e.what();
  }
  if (!error.empty()) std::cerr << "odisr: error: " << error << "\n";
  run.write(code, error);
  return code;
}
