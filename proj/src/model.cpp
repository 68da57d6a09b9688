// SPDX-License-Identifier: Apache-2.0
#include "odisr/model.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include "odisr/error.hpp"
#include "odisr/ops.hpp"

namespace odisr {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

// ---- configuration -------------------------------------------------------

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid model config: " + what);
}

bool is_square(int n) {
  int r = 0;
  while (r * r < n) ++r;
  return r * r == n;
}

}  // namespace

void ModelConfig::validate() const {
  require(num_dabs >= 1, "num_dabs must be at least 1");
  require(dals_per_dab >= 1, "dals_per_dab must be at least 1");
  require(heads >= 2 && heads % 2 == 0, "heads must be a positive even number");
  require(embed_dim >= heads && embed_dim % heads == 0,
          "embed_dim " + std::to_string(embed_dim) + " not divisible by heads " + std::to_string(heads));
  require(h_window.rh >= 1 && h_window.rw >= 1 && v_window.rh >= 1 && v_window.rw >= 1,
          "window extents must be positive");
  require(ddsa_points >= 1 && is_square(ddsa_points), "ddsa_points must be a positive square");
  require(ddsa_radius > 0, "ddsa_radius must be positive");
  require(dfa_reduction >= 1 && embed_dim % dfa_reduction == 0, "dfa_reduction must divide embed_dim");
  require(mlp_ratio >= 1, "mlp_ratio must be at least 1");
  require(scale == 2 || scale == 4 || scale == 8 || scale == 16, "scale must be 2, 4, 8 or 16");
  require(in_channels >= 1, "in_channels must be positive");
  require(use_dmrsa || use_ddsa, "at least one of DMRSA and DDSA must be enabled");
}

std::int64_t ModelConfig::pad_multiple_h() const {
  return use_dmrsa ? std::lcm(h_window.rh, v_window.rh) : 1;
}

std::int64_t ModelConfig::pad_multiple_w() const {
  return use_dmrsa ? std::lcm(h_window.rw, v_window.rw) : 1;
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.num_dabs = 6;
  c.dals_per_dab = 6;
  c.embed_dim = 156;
  c.heads = 6;
  c.h_window = {8, 64};
  c.v_window = {64, 8};
  c.scale = 4;
  return c;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {
      {"num_dabs", c.num_dabs},
      {"dals_per_dab", c.dals_per_dab},
      {"embed_dim", c.embed_dim},
      {"heads", c.heads},
      {"h_window", {c.h_window.rh, c.h_window.rw}},
      {"v_window", {c.v_window.rh, c.v_window.rw}},
      {"ddsa_points", c.ddsa_points},
      {"ddsa_radius", c.ddsa_radius},
      {"dfa_reduction", c.dfa_reduction},
      {"mlp_ratio", c.mlp_ratio},
      {"scale", c.scale},
      {"in_channels", c.in_channels},
      {"dtype", dtype_name(c.dtype)},
      {"seed", c.seed},
      {"use_dmrsa", c.use_dmrsa},
      {"use_ddsa", c.use_ddsa},
      {"use_guidance", c.use_guidance},
      {"use_diff", c.use_diff},
      {"conv_block", "DACB-sub"},
  };
}

namespace {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("model config field '") + key + "' has the wrong type");
  }
}

void read_window(const nlohmann::json& j, const char* key, WindowSpec& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer())
    throw ConfigError(std::string("model config field '") + key + "' must be [rows, cols]");
  out = {v[0].get<std::int64_t>(), v[1].get<std::int64_t>()};
}

}  // namespace

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  static const std::set<std::string> known = {
      "num_dabs",  "dals_per_dab", "embed_dim", "heads",     "h_window",     "v_window",
      "ddsa_points", "ddsa_radius", "dfa_reduction", "mlp_ratio", "scale",  "in_channels",
      "dtype",     "seed",         "use_dmrsa", "use_ddsa",  "use_guidance", "use_diff",
      "conv_block"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError("unknown model config key '" + key + "'");
  ModelConfig c;
  read_field(j, "num_dabs", c.num_dabs);
  read_field(j, "dals_per_dab", c.dals_per_dab);
  read_field(j, "embed_dim", c.embed_dim);
  read_field(j, "heads", c.heads);
  read_window(j, "h_window", c.h_window);
  read_window(j, "v_window", c.v_window);
  read_field(j, "ddsa_points", c.ddsa_points);
  read_field(j, "ddsa_radius", c.ddsa_radius);
  read_field(j, "dfa_reduction", c.dfa_reduction);
  read_field(j, "mlp_ratio", c.mlp_ratio);
  read_field(j, "scale", c.scale);
  read_field(j, "in_channels", c.in_channels);
  read_field(j, "seed", c.seed);
  read_field(j, "use_dmrsa", c.use_dmrsa);
  read_field(j, "use_ddsa", c.use_ddsa);
  read_field(j, "use_guidance", c.use_guidance);
  read_field(j, "use_diff", c.use_diff);
  if (j.contains("dtype")) {
    std::string dt;
    read_field(j, "dtype", dt);
    if (dt == "f32") c.dtype = DType::f32;
    else if (dt == "f64") c.dtype = DType::f64;
    else throw ConfigError("model config dtype must be \"f32\" or \"f64\", got \"" + dt + "\"");
  }
  if (j.contains("conv_block") && j.at("conv_block") != "DACB-sub")
    throw ConfigError("only the DACB-sub convolution block is implemented");
  c.validate();
  return c;
}

// ---- network -------------------------------------------------------------

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Philox rng(cfg_.seed, 0x6d6f64656c);  // "model"
  const DType dt = cfg_.dtype;
  const std::int64_t C = cfg_.embed_dim;
  shallow_ = Conv(rng, cfg_.in_channels, C, 3, dt);
  if (cfg_.use_dmrsa && cfg_.use_guidance) dgg_ = DggParams(rng, C, dt);
  for (int i = 0; i < cfg_.num_dabs; ++i) {
    DabParams dab;
    for (int j = 0; j < cfg_.dals_per_dab; ++j) {
      DalParams dal;
      dal.norm1 = ChannelNorm(C, dt);
      dal.norm2 = ChannelNorm(C, dt);
      if (cfg_.use_dmrsa)
        dal.rwin = RwinParams(rng, C, cfg_.heads, cfg_.h_window, cfg_.v_window, dt);
      if (cfg_.use_ddsa) dal.ddsa = DdsaParams(rng, C, cfg_.heads, cfg_.ddsa_points, cfg_.ddsa_radius, dt);
      if (cfg_.use_dmrsa && cfg_.use_ddsa) dal.dfa = DfaParams(rng, C, cfg_.dfa_reduction, dt, cfg_.use_diff);
      dal.mlp_in = Conv::projection(rng, C, C * cfg_.mlp_ratio, dt);
      dal.mlp_out = Conv::projection(rng, C * cfg_.mlp_ratio, C, dt);
      dal.mlp_out.zero();
      dab.dals.push_back(std::move(dal));
    }
    dab.conv = Conv(rng, C, C, 3, dt);
    dab.dacb_conv = Conv(rng, C + 1, C, 3, dt);
    dab.dacb_proj = Conv(rng, C, C, 1, dt);
    dabs_.push_back(std::move(dab));
  }
  body_conv_ = Conv(rng, C, C, 3, dt);
  for (int s = cfg_.scale; s > 1; s /= 2) upsample_.push_back(Conv(rng, C, 4 * C, 3, dt));
  final_ = Conv(rng, C, cfg_.in_channels, 3, dt);
  register_parameters();
}

void Model::register_parameters() {
  shallow_.collect("shallow", params_);
  if (cfg_.use_dmrsa && cfg_.use_guidance) dgg_.collect("dgg", params_);
  for (std::size_t i = 0; i < dabs_.size(); ++i) {
    const std::string dp = "dabs." + std::to_string(i);
    const auto& dab = dabs_[i];
    for (std::size_t j = 0; j < dab.dals.size(); ++j) {
      const std::string lp = dp + ".dals." + std::to_string(j);
      const auto& dal = dab.dals[j];
      dal.norm1.collect(lp + ".norm1", params_);
      if (cfg_.use_dmrsa) dal.rwin.collect(lp + ".dmrsa", params_);
      if (cfg_.use_ddsa) dal.ddsa.collect(lp + ".ddsa", params_);
      if (cfg_.use_dmrsa && cfg_.use_ddsa) dal.dfa.collect(lp + ".dfa", params_);
      dal.norm2.collect(lp + ".norm2", params_);
      dal.mlp_in.collect(lp + ".mlp.fc1", params_);
      dal.mlp_out.collect(lp + ".mlp.fc2", params_);
    }
    dab.conv.collect(dp + ".conv", params_);
    dab.dacb_conv.collect(dp + ".dacb.conv", params_);
    dab.dacb_proj.collect(dp + ".dacb.proj", params_);
  }
  body_conv_.collect("body_conv", params_);
  for (std::size_t k = 0; k < upsample_.size(); ++k)
    upsample_[k].collect("upsample." + std::to_string(k), params_);
  final_.collect("final", params_);
}

Tensor Model::guidance(const Tensor& distortion) const {
  if (!cfg_.use_dmrsa) return {};
  if (!cfg_.use_guidance)
    return Tensor::full({1, cfg_.embed_dim, distortion.dim(2), distortion.dim(3)}, 1.0, cfg_.dtype);
  return dgg_forward(distortion, dgg_);
}

LayerContext Model::context(const Tensor& distortion) const {
  return {distortion, guidance(distortion)};
}

Tensor Model::dal_forward(const Tensor& x, const LayerContext& ctx, const DalParams& p) const {
  Tensor xn = p.norm1(x);
  Tensor f1, f2;
  if (cfg_.use_dmrsa) f1 = dmrsa(xn, ctx.guidance, p.rwin);
  if (cfg_.use_ddsa) f2 = ddsa(xn, ctx.distortion, p.ddsa);
  Tensor attended = f1.defined() && f2.defined() ? dfa(f1, f2, p.dfa) : f1.defined() ? f1 : f2;
  Tensor u = add(x, attended);
  return add(u, p.mlp_out(gelu(p.mlp_in(p.norm2(u)))));
}

Tensor Model::dab_forward(const Tensor& x, const LayerContext& ctx, const DabParams& p) const {
  Tensor f = x;
  for (const auto& dal : p.dals) f = dal_forward(f, ctx, dal);
  f = p.conv(f);
  Tensor d = ctx.distortion;
  if (d.dim(0) != f.dim(0)) d = expand(d, {f.dim(0), 1, f.dim(2), f.dim(3)});
  return add(x, p.dacb_proj(p.dacb_conv(concat({f, d}, 1))));
}

Tensor Model::forward(const Tensor& lr, const Tensor& distortion) const {
  if (lr.rank() != 4 || lr.dim(1) != cfg_.in_channels)
    throw DimensionError("model expects [b, " + std::to_string(cfg_.in_channels) +
                         ", h, w], got " + to_string(lr.shape()));
  if (lr.dtype() != cfg_.dtype)
    throw DimensionError(std::string("model runs in ") + dtype_name(cfg_.dtype) + ", input is " +
                         dtype_name(lr.dtype()));
  const std::int64_t b = lr.dim(0), h = lr.dim(2), w = lr.dim(3);
  Tensor d = distortion.defined() ? distortion : distortion_map(h, w).tensor(cfg_.dtype);
  if (d.rank() != 4 || d.dim(1) != 1 || d.dim(2) != h || d.dim(3) != w ||
      (d.dim(0) != 1 && d.dim(0) != b))
    throw DimensionError("distortion " + to_string(d.shape()) + " does not match input " +
                         to_string(lr.shape()));

  Tensor x0 = shallow_(lr);
  const std::int64_t mh = cfg_.pad_multiple_h(), mw = cfg_.pad_multiple_w();
  const auto ph = static_cast<int>((mh - h % mh) % mh), pw = static_cast<int>((mw - w % mw) % mw);
  if (ph >= h || pw >= w)
    throw DimensionError("input " + std::to_string(h) + " x " + std::to_string(w) +
                         " is too small to pad to a multiple of " + std::to_string(mh) + " x " +
                         std::to_string(mw));
  Tensor f = ph || pw ? pad_reflect(x0, 0, ph, 0, pw) : x0;
  Tensor dp = ph || pw ? pad_reflect(d, 0, ph, 0, pw) : d;

  const LayerContext ctx = context(dp);
  for (const auto& dab : dabs_) f = dab_forward(f, ctx, dab);
  if (ph || pw) f = narrow(narrow(f, 2, 0, h), 3, 0, w);
  Tensor y = add(body_conv_(f), x0);
  for (const auto& up : upsample_) y = pixel_shuffle(up(y), 2);
  return final_(y);
}

// ---- checkpoints ---------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'O', 'D', 'S', 'R'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), c, c + n);
  }
  template <typename T>
  void put(T v) { bytes(&v, sizeof(T)); }
  std::vector<std::uint8_t> buf;
};

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}
  void bytes(void* out, std::size_t n) {
    if (pos_ + n > n_) throw IntegrityError("checkpoint truncated");
    std::memcpy(out, p_ + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T get() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  std::size_t remaining() const { return n_ - pos_; }

 private:
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

std::size_t kind_size(CheckpointEntry::Kind k) {
  switch (k) {
    case CheckpointEntry::Kind::f32: return 4;
    case CheckpointEntry::Kind::f64: return 8;
    case CheckpointEntry::Kind::u8: return 1;
  }
  throw FormatError("unknown checkpoint dtype");
}

std::uint32_t crc(const std::uint8_t* p, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), p, static_cast<uInt>(n)));
}

}  // namespace

CheckpointEntry CheckpointEntry::from_tensor(const std::string& name, const Tensor& t) {
  CheckpointEntry e;
  e.name = name;
  e.kind = t.dtype() == DType::f32 ? Kind::f32 : Kind::f64;
  e.shape = t.shape();
  dispatch(t.dtype(), [&]<typename T>() {
    auto d = t.data<T>();
    e.bytes.resize(d.size() * sizeof(T));
    std::memcpy(e.bytes.data(), d.data(), e.bytes.size());
  });
  return e;
}

CheckpointEntry CheckpointEntry::from_text(const std::string& name, const std::string& text) {
  CheckpointEntry e;
  e.name = name;
  e.kind = Kind::u8;
  e.shape = {static_cast<std::int64_t>(text.size())};
  e.bytes.assign(text.begin(), text.end());
  return e;
}

Tensor CheckpointEntry::to_tensor() const {
  if (kind == Kind::u8) throw FormatError("checkpoint entry '" + name + "' is not a float array");
  const DType dt = kind == Kind::f32 ? DType::f32 : DType::f64;
  Tensor t = Tensor::zeros(shape, dt);
  dispatch(dt, [&]<typename T>() {
    auto d = t.mutable_data<T>();
    if (bytes.size() != d.size() * sizeof(T))
      throw IntegrityError("checkpoint entry '" + name + "' payload does not match its shape");
    std::memcpy(d.data(), bytes.data(), bytes.size());
  });
  return t;
}

std::string CheckpointEntry::to_text() const {
  if (kind != Kind::u8) throw FormatError("checkpoint entry '" + name + "' is not a byte blob");
  return {bytes.begin(), bytes.end()};
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries) {
  Writer w;
  w.bytes(kMagic, 4);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.name).second) throw IntegrityError("duplicate checkpoint entry '" + e.name + "'");
    if (e.name.size() > 0xffff) throw FormatError("checkpoint entry name too long");
    if (e.shape.size() > 0xff) throw FormatError("checkpoint entry rank too large");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.kind));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.shape.size()));
    for (auto d : e.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    if (e.bytes.size() != numel(e.shape) * kind_size(e.kind))
      throw IntegrityError("checkpoint entry '" + e.name + "' payload does not match its shape");
    w.bytes(e.bytes.data(), e.bytes.size());
  }
  w.put<std::uint32_t>(crc(w.buf.data(), w.buf.size()));

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    os.write(reinterpret_cast<const char*>(w.buf.data()), static_cast<std::streamsize>(w.buf.size()));
    if (!os) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0)
    throw FormatError(path.string() + " is not a checkpoint (bad magic)");
  if (buf.size() < 16) throw IntegrityError("checkpoint " + path.string() + " is truncated");
  std::uint32_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 4, 4);
  if (crc(buf.data(), buf.size() - 4) != stored)
    throw IntegrityError("checkpoint " + path.string() + " failed its CRC check (corrupt or truncated)");

  Reader r(buf.data() + 4, buf.size() - 8);
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion)
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kVersion) + ")");
  const auto count = r.get<std::uint32_t>();
  std::vector<CheckpointEntry> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name.resize(r.get<std::uint16_t>());
    r.bytes(e.name.data(), e.name.size());
    const auto kind = r.get<std::uint8_t>();
    if (kind > 2) throw FormatError("checkpoint entry '" + e.name + "' has unknown dtype " + std::to_string(kind));
    e.kind = static_cast<CheckpointEntry::Kind>(kind);
    e.shape.resize(r.get<std::uint8_t>());
    for (auto& d : e.shape) d = r.get<std::uint32_t>();
    e.bytes.resize(numel(e.shape) * kind_size(e.kind));
    r.bytes(e.bytes.data(), e.bytes.size());
    out.push_back(std::move(e));
  }
  if (r.remaining() != 0) throw IntegrityError("checkpoint has trailing bytes before its CRC");
  return out;
}

std::vector<CheckpointEntry> model_entries(const Model& model, const std::vector<CheckpointEntry>& extra) {
  std::vector<CheckpointEntry> entries;
  entries.push_back(CheckpointEntry::from_text(kConfigEntry, to_json(model.config()).dump()));
  for (const auto& [name, t] : model.parameters().entries()) entries.push_back(CheckpointEntry::from_tensor(name, t));
  entries.insert(entries.end(), extra.begin(), extra.end());
  return entries;
}

void save_model(const Model& model, const std::filesystem::path& path, const std::vector<CheckpointEntry>& extra) {
  write_checkpoint(path, model_entries(model, extra));
}

namespace {

const CheckpointEntry& config_entry(const std::vector<CheckpointEntry>& entries) {
  for (const auto& e : entries)
    if (e.name == kConfigEntry) return e;
  throw IntegrityError("checkpoint has no __config__ entry");
}

nlohmann::json parse_config_text(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
}

}  // namespace

void load_parameters(Model& model, const std::vector<CheckpointEntry>& entries) {
  const nlohmann::json stored = parse_config_text(config_entry(entries).to_text());
  const nlohmann::json mine = to_json(model.config());
  std::string mismatch;
  for (const auto& [key, value] : mine.items()) {
    if (key == "seed") continue;
    if (!stored.contains(key) || stored.at(key) != value)
      mismatch += (mismatch.empty() ? "" : "; ") + key + ": checkpoint " +
                  (stored.contains(key) ? stored.at(key).dump() : "<absent>") + " vs model " + value.dump();
  }
  if (!mismatch.empty()) throw ConfigError("checkpoint config does not match the model: " + mismatch);

  std::vector<std::string> missing, unexpected;
  std::set<std::string> present;
  for (const auto& e : entries) {
    if (e.name.rfind("__", 0) == 0) continue;
    present.insert(e.name);
    if (!model.parameters().contains(e.name)) unexpected.push_back(e.name);
  }
  for (const auto& name : model.parameters().names())
    if (!present.count(name)) missing.push_back(name);
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
    return s;
  };
  if (!missing.empty()) throw IntegrityError("checkpoint is missing parameters: " + join(missing));
  if (!unexpected.empty()) throw IntegrityError("checkpoint has unknown parameters: " + join(unexpected));

  // Validate everything before touching the model.
  std::vector<std::pair<Tensor, Tensor>> copies;
  for (const auto& e : entries) {
    if (e.name.rfind("__", 0) == 0) continue;
    Tensor src = e.to_tensor();
    const Tensor& dst = model.parameters().get(e.name);
    if (src.shape() != dst.shape() || src.dtype() != dst.dtype())
      throw IntegrityError("checkpoint parameter '" + e.name + "' is " + to_string(src.shape()) + " " +
                           dtype_name(src.dtype()) + ", model expects " + to_string(dst.shape()) + " " +
                           dtype_name(dst.dtype()));
    copies.emplace_back(src, dst);
  }
  for (auto& [src, dst] : copies)
    dispatch(dst.dtype(), [&]<typename T>() {
      auto s = src.template data<T>();
      auto d = dst.template mutable_data<T>();
      std::copy(s.begin(), s.end(), d.begin());
    });
}

Model load_model(const std::filesystem::path& path) {
  const auto entries = read_checkpoint(path);
  Model model(model_config_from_json(parse_config_text(config_entry(entries).to_text())));
  load_parameters(model, entries);
  return model;
}

}  // namespace odisr
