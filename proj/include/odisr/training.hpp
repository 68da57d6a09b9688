// SPDX-License-Identifier: Apache-2.0
//
// Adam, the step learning-rate schedule, patch sampling with true-latitude
// distortion weights, and a resumable training loop.
#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "odisr/image_io.hpp"
#include "odisr/model.hpp"
#include "odisr/rng.hpp"

namespace odisr {

struct TrainConfig {
  double lr0 = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  int iterations = 2000;
  /// Fractions of `iterations` at which the learning rate halves.
  std::vector<double> milestones{0.5, 0.8, 0.9, 0.95};
  int batch = 2;
  /// LR patch edge; HR patches are patch * scale.
  int patch = 16;
  std::uint64_t seed = 0;
  /// Loss trace and evaluation cadence.
  int log_every = 100;
  /// Write a resumable checkpoint every this many iterations (0: only at the end).
  int checkpoint_every = 0;
  bool raw_loss = false;
  bool hflip = false;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
/// Strict: unknown keys and wrong types raise ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j);

/// lr0 * 0.5^(milestones passed), a milestone at fraction f counting once
/// iter >= f * iterations.
double lr_at(int iter, const TrainConfig& cfg);

class Adam {
 public:
  Adam(const ParameterSet& params, double beta1, double beta2, double eps);

  /// One bias-corrected update from the accumulated gradients (missing
  /// gradients count as zero). NumericError naming the parameter and
  /// `iteration` if any gradient is non-finite; nothing is updated then.
  void step(ParameterSet& params, double lr, int iteration);
  std::int64_t steps() const { return step_; }

  std::vector<CheckpointEntry> state_entries() const;
  /// IntegrityError if any moment is missing or misshapen.
  void load_state(const std::vector<CheckpointEntry>& entries);

 private:
  double beta1_, beta2_, eps_;
  std::int64_t step_ = 0;
  std::vector<std::string> names_;
  std::vector<Tensor> m_, v_;
};

/// One HR image with its bicubic LR counterpart, both [1, 3, h, w] in [0, 1].
struct TrainPair {
  std::string name;
  Tensor hr;
  Tensor lr;
};

struct Dataset {
  int scale = 2;
  std::vector<TrainPair> items;
};

/// HR images are cropped to multiples of `scale`; LR is the antialiased
/// bicubic downscale, quantized to 8 bits.
Dataset make_dataset(const std::vector<std::pair<std::string, Image8>>& hr, int scale, DType dtype);
/// Every *.png in `dir`, in name order. IoError if none.
Dataset load_dataset(const std::filesystem::path& dir, int scale, DType dtype);
/// `count` smooth random colour images of size `size` x `size`.
Dataset synthetic_dataset(int count, int size, int scale, std::uint64_t seed, DType dtype);

struct Crop {
  std::size_t image = 0;
  std::int64_t y = 0;  // LR coordinates
  std::int64_t x = 0;
  bool flipped = false;
};

struct PatchBatch {
  Tensor lr;             // [b, 3, p, p]
  Tensor hr;             // [b, 3, p*s, p*s]
  Tensor lr_distortion;  // [b, 1, p, p], rows of the full LR image map
  Tensor hr_distortion;  // [b, 1, p*s, p*s], rows of the full HR image map
  std::vector<Crop> crops;
};

/// Aligned random crops; images smaller than the patch are skipped (train()
/// warns about them). DimensionError if no image is large enough.
PatchBatch sample_patches(const Dataset& data, int patch, int batch, Philox& rng, bool hflip = false);

/// Mean WS-l1 of the model over whole images of the dataset.
double dataset_loss(const Model& model, const Dataset& data, bool raw = false);

struct TrainRecord {
  int iteration = 0;
  double lr = 0;
  double loss = 0;       // the batch loss at this iteration
  double eval_loss = -1; // whole-dataset loss, at log points only
};

struct TrainOptions {
  std::filesystem::path out_dir{};  // empty: no files written
  std::optional<std::filesystem::path> resume{};
  /// Stop after this many iterations of the current call (simulated interrupt).
  std::optional<int> stop_after{};
  std::function<void(const TrainRecord&)> on_log{};
};

struct TrainResult {
  std::vector<TrainRecord> trace;  // every iteration run by this call
  double initial_eval_loss = 0;
  double final_eval_loss = 0;
  double best_eval_loss = 0;
  int best_iteration = 0;
  int next_iteration = 0;
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
};

inline constexpr const char* kTrainStateEntry = "__train_state__";

/// sample -> forward -> ws_l1 -> backward -> Adam, with lr_at. Writes
/// `loss.csv`, `best.ckpt`, `final.ckpt` (and `last.ckpt` when interrupted
/// or checkpointing periodically) into out_dir. NumericError on a non-finite
/// loss after dumping the trace.
TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg, const TrainOptions& opts = {});

}  // namespace odisr
