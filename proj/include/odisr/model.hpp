// SPDX-License-Identifier: Apache-2.0
//
// The super-resolution network: shallow conv, a chain of dual-attention
// blocks guided by the distortion map, and a pixel-shuffle reconstruction.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "odisr/attention.hpp"
#include "odisr/dfa.hpp"
#include "odisr/dgg.hpp"
#include "odisr/layers.hpp"

namespace odisr {

struct ModelConfig {
  int num_dabs = 2;
  int dals_per_dab = 2;
  std::int64_t embed_dim = 32;
  int heads = 2;
  WindowSpec h_window{4, 16};
  WindowSpec v_window{16, 4};
  int ddsa_points = 9;
  double ddsa_radius = 8.0;
  std::int64_t dfa_reduction = 4;
  int mlp_ratio = 2;
  int scale = 2;
  std::int64_t in_channels = 3;
  DType dtype = DType::f32;
  std::uint64_t seed = 0;

  // Ablations.
  bool use_dmrsa = true;
  bool use_ddsa = true;
  bool use_guidance = true;  // false: guidance fixed to 1
  bool use_diff = true;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  /// Height and width multiple the padded feature map must have.
  std::int64_t pad_multiple_h() const;
  std::int64_t pad_multiple_w() const;

  static ModelConfig desk();
  /// Full-size network: 6 blocks of 6 layers, C = 156, x4.
  static ModelConfig full_scale();
};

nlohmann::json to_json(const ModelConfig& cfg);
/// Strict: unknown keys and wrong types raise ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j);

struct DalParams {
  ChannelNorm norm1;
  ChannelNorm norm2;
  RwinParams rwin;
  DdsaParams ddsa;
  DfaParams dfa;
  Conv mlp_in;
  Conv mlp_out;  // zero-initialized
};

struct DabParams {
  std::vector<DalParams> dals;
  Conv conv;       // 3x3 after the layer chain
  Conv dacb_conv;  // 3x3 over concat(features, D)
  Conv dacb_proj;  // 1x1 back to C
};

/// Inputs shared by every layer of one forward pass. `guidance` is all ones
/// when the generator is disabled and undefined without DMRSA.
struct LayerContext {
  Tensor distortion;  // [b or 1, 1, h, w]
  Tensor guidance;    // [b or 1, C, h, w]
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const ParameterSet& parameters() const { return params_; }
  ParameterSet& parameters() { return params_; }

  /// lr [b, C_in, h, w] -> [b, C_in, h * s, w * s]. `distortion` gives the
  /// map rows for each sample ([b or 1, 1, h, w]); by default the whole-image
  /// map of extent h x w is used.
  Tensor forward(const Tensor& lr, const Tensor& distortion = {}) const;
  /// Guidance for a (padded) distortion map, [b or 1, C, h, w].
  Tensor guidance(const Tensor& distortion) const;

  Tensor dal_forward(const Tensor& x, const LayerContext& ctx, const DalParams& p) const;
  Tensor dab_forward(const Tensor& x, const LayerContext& ctx, const DabParams& p) const;
  LayerContext context(const Tensor& distortion) const;
  /// Output of the first convolution, the input of the first block.
  Tensor shallow_features(const Tensor& lr) const { return shallow_(lr); }

  std::vector<DabParams>& dabs() { return dabs_; }
  const std::vector<DabParams>& dabs() const { return dabs_; }

 private:
  void register_parameters();

  ModelConfig cfg_;
  Conv shallow_;
  DggParams dgg_;
  std::vector<DabParams> dabs_;
  Conv body_conv_;
  std::vector<Conv> upsample_;
  Conv final_;
  ParameterSet params_;
};

// ---- checkpoints ---------------------------------------------------------

/// One named array in a checkpoint file.
struct CheckpointEntry {
  enum class Kind : std::uint8_t { f32 = 0, f64 = 1, u8 = 2 };
  std::string name;
  Kind kind = Kind::f32;
  Shape shape;
  std::vector<std::uint8_t> bytes;  // little-endian payload

  static CheckpointEntry from_tensor(const std::string& name, const Tensor& t);
  static CheckpointEntry from_text(const std::string& name, const std::string& text);
  Tensor to_tensor() const;
  std::string to_text() const;
};

/// Serializes entries in order with header, CRC32 trailer. Atomic (writes a
/// temporary file, then renames).
void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
/// FormatError on bad magic/version, IntegrityError on truncation or CRC mismatch.
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

inline constexpr const char* kConfigEntry = "__config__";

/// `__config__` followed by every parameter, plus `extra` entries.
std::vector<CheckpointEntry> model_entries(const Model& model,
                                           const std::vector<CheckpointEntry>& extra = {});
void save_model(const Model& model, const std::filesystem::path& path,
                const std::vector<CheckpointEntry>& extra = {});
/// Builds a model from the stored config and loads every parameter.
Model load_model(const std::filesystem::path& path);
/// Copies parameters from entries into `model`. ConfigError when the stored
/// config disagrees with the model's; IntegrityError listing missing names.
void load_parameters(Model& model, const std::vector<CheckpointEntry>& entries);

}  // namespace odisr
