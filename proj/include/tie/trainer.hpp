#ifndef TIE_TRAINER_HPP
#define TIE_TRAINER_HPP

#include "tie/checkpoint.hpp"
#include "tie/codec.hpp"
#include "tie/instruction.hpp"
#include "tie/metrics.hpp"
#include "tie/model.hpp"
#include "tie/optim.hpp"
#include "tie/schedule.hpp"
#include "tie/schema.hpp"

#include <json.hpp>

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tie {

/// Optimisation settings of one phase.
struct TrainConfig {
  int epochs = 1;
  int batch_size = 8;
  double lr = 1e-3;
  /// Stop after this many steps in total; 0 runs every epoch.
  std::int64_t max_steps = 0;
  /// Pretraining only.
  GateMode gate = GateMode::group;
  /// Finetuning only: start Adam from zero instead of the checkpoint's moments.
  bool reset_optimizer = true;
};

struct DataConfig {
  std::vector<std::string> sources;
  std::string target;
  /// Dataset id -> instruction file, overriding the manifest's entry.
  std::map<std::string, std::string> instructions;
  int max_len = 128;
  int min_count = 1;
  bool lowercase = true;
};

/// Everything a run needs. Errors from from_json name the field path,
/// e.g. "pretrain.batch_size: must be >= 1". The seed is mandatory.
struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig pretrain;
  TrainConfig finetune;
  double threshold = 0.5;
  DataConfig data;
  std::string out;

  void validate() const;
  /// Every referenced manifest and instruction file must exist.
  void check_paths() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

/// Default settings overlaid with `overrides` (objects merge recursively).
nlohmann::json merge_config(const nlohmann::json& base, const nlohmann::json& overrides);

/// A dataset together with its instruction templates.
struct TaskData {
  Dataset dataset;
  std::vector<std::string> templates;
};

/// Loads a manifest and its instruction file (`instructions` overrides the
/// manifest's own entry); without either the dataset gets a single template
/// listing every channel.
TaskData load_task(const std::filesystem::path& manifest, int max_len,
                   const std::map<std::string, std::string>& instructions = {});
std::string default_template(const LabelSpace& labels);
nlohmann::json task_to_json(const TaskData& task);
/// Label space and templates only; splits stay empty.
TaskData task_from_json(const nlohmann::json& j);

/// Vocabulary over the training sentences and instruction tokens.
Vocabulary build_vocabulary(const std::vector<TaskData>& tasks, int min_count, bool lowercase);

/// Mean cell-wise BCE between logits and the gold cube.
Tensor pair_loss(const Tensor& logits, const GoldMatrix& gold);

struct TrainerState {
  std::int64_t step = 0;
  int epoch = 0;
  int batch = 0;  // next batch within the epoch
  Rng instruction_rng;
  Rng dropout_rng;
};

/// Pretraining or finetuning loop over prepared tasks, one batch per step().
class Trainer {
 public:
  Trainer(Model model, Vocabulary vocab, std::vector<TaskData> tasks, RunConfig config, PlanMode mode);

  bool finished() const;
  /// Runs the next batch; epoch boundaries advance automatically.
  StepReport step();
  /// True when the last step() completed an epoch.
  bool epoch_completed() const { return epoch_completed_; }

  const Model& model() const { return model_; }
  Model& model() { return model_; }
  const Vocabulary& vocab() const { return vocab_; }
  const std::vector<TaskData>& tasks() const { return tasks_; }
  const RunConfig& config() const { return config_; }
  PlanMode mode() const { return mode_; }
  const TrainerState& state() const { return state_; }
  const Adam& optimizer() const { return optimizer_; }
  const GradientSnapshot& snapshot() const { return snapshot_; }

  const BatchPlan& plan() const { return plan_; }
  /// Phase settings in use (pretrain or finetune section).
  const TrainConfig& phase() const;

  CheckpointFile checkpoint() const;
  /// Rebuilds a trainer mid-run; `tasks` must hold the same data.
  static Trainer resume(const CheckpointFile& file, std::vector<TaskData> tasks);
  /// Copies Adam moments and step counts for every tensor whose name and
  /// shape match a tensor in `file`.
  void adopt_optimizer(const CheckpointFile& file);

 private:
  void prepare();
  void make_plan();

  Model model_;
  Vocabulary vocab_;
  std::vector<TaskData> tasks_;
  RunConfig config_;
  PlanMode mode_;
  std::vector<InstructionPool> pools_;
  std::vector<std::vector<Index>> columns_;
  std::vector<std::vector<std::vector<int>>> token_ids_;
  std::vector<std::vector<GoldMatrix>> golds_;
  Adam optimizer_;
  GradientSnapshot snapshot_;
  TrainerState state_;
  BatchPlan plan_;
  int planned_epoch_ = -1;
  std::string previous_dataset_;
  bool epoch_completed_ = false;
};

struct Evaluation {
  std::vector<Prediction> predictions;
  ScoreReport report;
  double headline = 0.0;
};

/// Scores a split with the task's first instruction.
Evaluation evaluate(const Model& model, const Vocabulary& vocab, const TaskData& task, const std::vector<Instance>& split,
                    double threshold);

using StepSink = std::function<void(const StepReport&)>;

struct PretrainResult {
  CheckpointFile checkpoint;
  std::int64_t gated_decisions = 0;
  std::int64_t skipped_decisions = 0;
  int repeats = 0;
  /// One {epoch, dataset, headline, report} record per source with a dev split, after every epoch.
  std::vector<nlohmann::json> dev_metrics;

  double skip_rate() const {
    return gated_decisions == 0 ? 0.0 : static_cast<double>(skipped_decisions) / static_cast<double>(gated_decisions);
  }
};

PretrainResult pretrain(const RunConfig& config, std::vector<TaskData> sources, const StepSink& sink = {});

struct FinetuneResult {
  CheckpointFile checkpoint;  // best dev epoch
  double best_dev = 0.0;
  int best_epoch = -1;
  std::vector<double> dev_curve;
};

/// Plain optimiser steps on one target. Starting from `from` keeps the
/// encoder, decoder and label attention and rebuilds the channel head for
/// the target's channels; without it the model starts from scratch. Adam
/// starts fresh unless finetune.reset_optimizer is false. Dev headline F1 is
/// measured after every epoch and the best epoch's parameters are kept.
FinetuneResult finetune(const RunConfig& config, const std::optional<CheckpointFile>& from, TaskData target,
                        const StepSink& sink = {});

/// Model, vocabulary and task descriptions stored in a checkpoint.
struct LoadedModel {
  Model model;
  Vocabulary vocab;
  RunConfig config;
  std::vector<TaskData> tasks;
};
LoadedModel load_model(const CheckpointFile& file);

}  // namespace tie

#endif  // TIE_TRAINER_HPP
