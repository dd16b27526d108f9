#pragma once

// AdamW training loop, per-category evaluation and the K-sweep runner.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "algstruct/datagen.hpp"
#include "algstruct/model.hpp"

namespace algstruct {

struct TrainConfig {
  double lr = 3e-4;
  int batch_size = 64;
  int max_steps = 8000;
  int eval_interval = 2000;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  // Decoupled decay, applied to 2-D weight matrices only.
  double weight_decay = 0.0;
  // Linear warmup length in steps; 0 keeps the rate constant.
  int warmup_steps = 100;
  // Cosine decay after warmup, from lr down to lr * final_lr_ratio at max_steps; 1 disables.
  double final_lr_ratio = 0.1;
  // Rescale the gradient when its global L2 norm exceeds this; 0 disables.
  double grad_clip = 1.0;
  std::uint64_t seed = 1;
  // Stop once train accuracy (every tag) stays >= this for `patience` evals.
  double early_stop_accuracy = 0.999;
  int early_stop_patience = 5;
  // Next-token loss over the whole sequence instead of the answer only.
  bool full_lm_loss = false;
  int eval_batch = 256;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

using AccuracyMap = std::map<TaskTag, double>;

struct SplitEval {
  AccuracyMap accuracy;
  double loss = 0.0;  // mean answer cross-entropy
};

struct EvalRecord {
  int step = 0;
  SplitEval train;
  SplitEval test;
};

struct MetricsHistory {
  std::vector<EvalRecord> records;
  int steps_run = 0;
  bool early_stopped = false;
};

SplitEval evaluate_split(const Params& params, const std::vector<TaggedEquation>& split,
                         int eval_batch = 256);
// Exact-match accuracy of predict() grouped by tag.
AccuracyMap evaluate(const Params& params, const std::vector<TaggedEquation>& split);

struct TrainResult {
  Params params;
  MetricsHistory history;
};

// Called after every evaluation; useful for progress output.
using EvalCallback = std::function<void(const EvalRecord&)>;

// When `out_dir` is set the checkpoint and metrics CSVs are written there.
TrainResult train(const TrainConfig& config, const ModelConfig& model_config,
                  const DatasetBundle& bundle,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                  const EvalCallback& on_eval = {});

// step,tag,split,accuracy
void write_metrics_csv(const MetricsHistory& history, const std::filesystem::path& file);
// step,split,loss
void write_loss_csv(const MetricsHistory& history, const std::filesystem::path& file);

struct SweepRow {
  int k = 0;
  TaskTag tag = TaskTag::PlusComm;
  double accuracy = 0.0;
};

struct SweepSpec {
  std::vector<int> k_values;  // ascending
  int k_test = 1000;
  std::uint64_t data_seed = 1;
  GenerationOptions options;
};

// One fresh model per K. Per-K artifacts go to out_dir/k<K>/ when given.
std::vector<SweepRow> k_sweep(const SweepSpec& spec, const TrainConfig& config,
                              const ModelConfig& model_config,
                              const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                              const EvalCallback& on_eval = {});

// k,tag,accuracy
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& file);

}  // namespace algstruct
