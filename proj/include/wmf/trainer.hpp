#pragma once

// Deep-supervised training loop with resumable state.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "wmf/checkpoint.hpp"
#include "wmf/image.hpp"
#include "wmf/losses.hpp"
#include "wmf/network.hpp"
#include "wmf/optim.hpp"
#include "wmf/rng.hpp"

namespace wmf {

struct TrainConfig {
  std::int64_t batch = 2;
  std::int64_t steps = 0;  // total step target, counted from initialization
  std::uint64_t seed = 0;
  AdamWConfig optim;
  LossWeights loss;
  std::int64_t eval_every = 0;        // 0 disables periodic evaluation
  std::int64_t checkpoint_every = 0;  // 0 saves only at the end
  std::int64_t eval_holdout = 0;      // trailing samples kept out of training
  std::uint64_t extractor_seed = FeatureExtractor::kDefaultSeed;

  void validate() const;
};

std::string config_to_json(const NetworkConfig& network, const TrainConfig& train);
void config_from_json(const std::string& json, NetworkConfig& network, TrainConfig& train);

// Samples in the synthesis layout: dir/{watermarked,background,mask}/<name>.png.
struct Dataset {
  std::vector<std::string> names;
  std::vector<Image> watermarked, background, mask;
  std::size_t size() const { return names.size(); }
};
Dataset load_dataset(const std::filesystem::path& dir);

struct Batch {
  Tensor watermarked, background, mask;
};
Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices, DType dtype = default_dtype());

// Means over the evaluated samples of the final-depth inference outputs.
struct EvalSummary {
  std::size_t samples = 0;
  double psnr = 0, ssim = 0, rmse = 0, f1 = 0, iou = 0;
  std::optional<double> rmse_w;
  double psnr_identity = 0;  // PSNR of the input J against I
  std::string to_json() const;
};
EvalSummary evaluate_model(const ModelParams& model, const Dataset& data, const std::vector<std::size_t>& indices,
                           std::size_t batch = 4);

struct StepLog {
  std::int64_t step = 0;
  double loss_total = 0;
  std::vector<DepthTerms> terms;
  std::optional<EvalSummary> eval;
  std::string to_json() const;
};

// Model tensors plus config; optimizer and trainer state are not required.
void store_model(CheckpointFile& file, const ModelParams& model, const TrainConfig& train);
ModelParams load_model(const CheckpointFile& file);

class Trainer {
 public:
  Trainer(const NetworkConfig& network, const TrainConfig& train, Dataset data);
  // Continues from a checkpoint written by checkpoint(). The stored
  // configuration wins; only the step target may change.
  static Trainer resume(const CheckpointFile& file, Dataset data, std::optional<std::int64_t> steps = {});

  StepLog step();
  // Steps until the configured target. Calls `on_log` after every step and
  // `on_checkpoint` at the checkpoint cadence and at the end.
  void run(const std::function<void(const StepLog&)>& on_log,
           const std::function<void(const CheckpointFile&)>& on_checkpoint);

  CheckpointFile checkpoint() const;
  EvalSummary evaluate() const;

  std::int64_t step_count() const { return step_; }
  const ModelParams& model() const { return model_; }
  ModelParams& model() { return model_; }
  const TrainConfig& config() const { return train_; }
  const AdamW& optimizer() const { return optim_; }
  const FeatureExtractor& extractor() const { return extractor_; }
  std::vector<std::size_t> train_indices() const;
  std::vector<std::size_t> eval_indices() const;

 private:
  Trainer(ModelParams model, const TrainConfig& train, Dataset data);
  std::vector<std::size_t> next_batch();

  TrainConfig train_;
  Dataset data_;
  ModelParams model_;
  AdamW optim_;
  FeatureExtractor extractor_;
  Rng rng_;
  std::vector<std::int64_t> queue_;  // pending sample order, consumed from the front
  std::int64_t step_ = 0;
};

}  // namespace wmf
