#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tdro/contrastive.hpp"
#include "tdro/corpus.hpp"
#include "tdro/dro.hpp"
#include "tdro/sampler.hpp"

namespace tdro {

struct TrainConfig {
  std::uint32_t batch_size = 256;   // desk-scale default; 2048 at paper scale
  std::uint32_t steps = 1000;
  std::uint32_t warmup_steps = 100;
  double model_lr = 1e-4;
  double min_lr_ratio = 0.1;
  double temperature = 0.05;
  double weights_lr = 2e-2;
  std::uint32_t shards = 4;
  std::uint64_t seed = 42;
  MeasurementKind measurement = MeasurementKind::Relative;
  double smoothing = 0.0;  // optional EMA on group means; 0 = per-step means
  std::uint32_t dim = 64;
  std::uint32_t vocab_buckets = 32768;
  double weight_floor = 1e-8;
  bool proxy_from_reference = false;  // start the proxy from the reference weights

  void validate() const;
  TokenizerConfig tokenizer() const { return TokenizerConfig{vocab_buckets, true}; }
  ContrastiveConfig contrastive() const { return ContrastiveConfig{temperature}; }
};

// Strict parse: unknown keys are rejected.
TrainConfig load_train_config(const std::filesystem::path& path);
std::string train_config_canonical_json(const TrainConfig& cfg);

struct LRSchedule {
  enum class Kind { CosineWithWarmup, Constant };
  Kind kind = Kind::CosineWithWarmup;
  double peak = 1e-4;
  double min_ratio = 0.1;
  std::uint32_t warmup = 100;
  std::uint32_t total = 1000;
};

// Linear 0 -> peak over the warmup, then cosine from peak down to
// min_ratio * peak at the final step.
double lr_at(const LRSchedule& s, std::uint64_t step);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  AdamWConfig cfg;
  std::uint64_t step = 0;  // update count, shared by all buckets
  std::unordered_map<std::uint32_t, std::pair<Vec, Vec>> moments;  // bucket -> (m, v)
};

// Decoupled-weight-decay update applied lazily: only buckets present in the
// gradient are touched, with bias correction from the global step count.
void adamw_step(EncoderParams& params, const GradientSet& grads, AdamWState& state,
                double lr);

struct StepMetrics {
  std::uint64_t step = 0;
  double lr = 0.0;
  std::vector<std::pair<std::string, double>> task_losses;  // unscaled batch means
};
using MetricsSink = std::function<void(const StepMetrics&)>;

struct TrainResult {
  EncoderParams params;
  std::map<std::string, double> final_task_losses;  // hard-regime mean per task
};

// Fine-tuning loop: task-homogeneous batches drawn per the artifact's
// sampling weights, full negatives, AdamW with cosine schedule. The "loss"
// strategy additionally scales each item's loss by its task multiplier.
TrainResult finetune(const std::vector<TaskDataset>& corpus, const TransferArtifact& artifact,
                     const TrainConfig& cfg, const MetricsSink& sink = {});

// Uniform-weights fine-tuning over all tasks; the reference recipe.
TrainResult train_reference(const std::vector<TaskDataset>& corpus, const TrainConfig& cfg,
                            const MetricsSink& sink = {});

struct TdroResult {
  WeightTrajectory trajectory;
  DomainWeights final_weights;
  std::vector<LossLogEntry> losslog;
  EncoderParams proxy;
};

// The robust-optimization stage. Per step: stratified batch -> proxy losses
// (hard negatives only) -> frozen reference losses on identical inputs ->
// group means -> measure -> normalize -> weight update -> proxy AdamW step
// with every item's gradient scaled by the fresh weight of its task.
//
// The proxy starts from `proxy_init` when given (the stand-in for a
// pretrained base model), else from the reference when
// cfg.proxy_from_reference is set, else from a fresh seeded init.
TdroResult run_tdro(const std::vector<TaskDataset>& corpus, const EncoderParams& reference,
                    const TrainConfig& cfg, const MetricsSink& sink = {},
                    const EncoderParams* proxy_init = nullptr);

}  // namespace tdro
