// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ocg/checkpoint.hpp"
#include "ocg/fixture.hpp"
#include "ocg/metrics.hpp"
#include "ocg/optim.hpp"
#include "ocg/preprocess.hpp"

namespace ocg::pipeline {

struct TrainConfig {
  int64_t batch_size = 12;
  double learning_rate = 1e-4;
  int64_t epochs = 25;
  std::optional<double> sigma_drone;
  std::optional<double> sigma_ground;
  uint64_t seed = 0;
  /// Stop after this many optimizer steps (0 = no limit).
  int64_t max_steps = 0;
  double mse_weight = 1.0;
  double weight_decay = 0.0;
  std::filesystem::path checkpoint_dir = "checkpoints";
  std::filesystem::path log_path;  // default: checkpoint_dir / "train_log.jsonl"
  std::optional<std::filesystem::path> init_checkpoint;
  /// Encoder weights to start from when the file exists; otherwise the
  /// encoders keep their random initialization and a warning is recorded.
  std::optional<std::filesystem::path> pretrained_backbones;
  std::string device = "cpu";
  bool deterministic = true;
  data::Split eval_split = data::Split::kValidation;
  /// Evaluate after every n-th epoch (0 = only after the last one).
  int64_t eval_every = 1;
  /// Mirror each training sample left-right with probability 1/2.
  bool augment = false;
  /// "constant" or "cosine" (decay to zero over the run's total steps).
  std::string lr_schedule = "constant";
  ModelConfig model = ModelConfig::standard();

  void validate() const;
  data::PreprocessOptions preprocess_options() const { return {sigma_drone, sigma_ground}; }
};

TrainConfig default_fewshot_config();

/// Anchors fitted to the train split's boxes, measured at the model's
/// canonical satellite resolution.
detection::AnchorTable fit_manifest_anchors(const data::Manifest& manifest, const ModelConfig& model,
                                            uint64_t seed);

/// Learning rate for optimizer step `step` (0-based) of `total_steps`.
double scheduled_learning_rate(const TrainConfig& cfg, int64_t step, int64_t total_steps);

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, TrainConfig& c);

struct SweepConfig {
  double sigma_start = 0.025;
  double sigma_end = 0.20;
  double sigma_step = 0.025;
  std::vector<double> thresholds{0.25, 0.50};
  data::Split split = data::Split::kValidation;

  void validate() const;
  /// Ascending grid start, start + step, ... up to end inclusive.
  std::vector<double> values() const;
};

inline constexpr const char* kSweepHeader = "sigma,acc_at_25,acc_at_50,split";

/// Stacks equally shaped tensors along a new leading axis.
Tensor<float> stack(const std::vector<const Tensor<float>*>& items);

struct Prediction {
  detection::PredictedBox box;
  Tensor<float> a_s;    // [Hs/32, Ws/32]
  Tensor<float> f_u_l;  // [Hq/32, Wq/32]
  Tensor<float> mhca_weights;  // [heads, Tq, Tk]
};

/// Gradient-free evaluation-mode forward passes over preprocessed inputs.
class Predictor {
 public:
  explicit Predictor(OcgNet<float>& model) : model_(model) {}

  /// All inputs must share a query kind.
  std::vector<Prediction> run(const std::vector<const data::ModelInputs*>& batch,
                              bool with_attention = false);
  Prediction run_one(const data::ModelInputs& in, bool with_attention = false);

 private:
  OcgNet<float>& model_;
};

struct EvalOutput {
  metrics::EvalReport report;
  std::vector<nlohmann::json> predictions;  // prediction records, manifest order
};

EvalOutput evaluate(OcgNet<float>& model, const data::Manifest& manifest, data::Split split,
                    const data::PreprocessOptions& opts = {},
                    const std::optional<std::vector<std::string>>& known_classes = {},
                    int64_t batch_size = 8);

/// Loads the checkpoint (checking it against `expected` when given).
EvalOutput evaluate_checkpoint(const std::filesystem::path& checkpoint,
                               const data::Manifest& manifest, data::Split split,
                               const std::optional<ModelConfig>& expected = {},
                               const data::PreprocessOptions& opts = {});

struct EpochLog {
  int64_t epoch = 0;
  int64_t steps = 0;
  detection::LossBreakdown loss;  // mean over the epoch's batches
  std::optional<metrics::EvalReport> eval;

  nlohmann::json to_json() const;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
  std::vector<EpochLog> epochs;
  int64_t steps = 0;
  std::vector<std::string> warnings;
};

/// Non-finite loss during training.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, std::vector<std::string> batch_ids)
      : Error(what), batch_ids(std::move(batch_ids)) {}
  std::vector<std::string> batch_ids;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Adam over shuffled single-kind batches of the train split. Writes one JSONL
/// row per epoch, keeps best.ckpt (by eval acc@0.25) and final.ckpt.
TrainResult train(const TrainConfig& cfg, const data::Manifest& manifest,
                  const EpochCallback& on_epoch = {});

struct SweepRow {
  double sigma = 0.0;
  bool failed = false;
  double acc_at_25 = 0.0;
  double acc_at_50 = 0.0;
  std::string error;
};

/// One train + evaluate run per sigma (applied to both query kinds); each run
/// writes under train_cfg.checkpoint_dir / "sigma_<value>". Returns the CSV
/// text and writes it to csv_path when non-empty.
std::string sweep_sigma(const SweepConfig& sweep, const TrainConfig& train_cfg,
                        const data::Manifest& manifest, const std::filesystem::path& csv_path = {},
                        std::vector<SweepRow>* rows = nullptr);

struct FewShotResult {
  std::filesystem::path checkpoint;
  metrics::EvalReport report;
  std::vector<std::string> warnings;
};

/// Fine-tunes every weight of the base checkpoint on the few-shot train
/// manifest and evaluates on the few-shot test manifest.
FewShotResult finetune_fewshot(const std::filesystem::path& base_checkpoint,
                               const data::FewShotSpec& spec, TrainConfig cfg);

}  // namespace ocg::pipeline
