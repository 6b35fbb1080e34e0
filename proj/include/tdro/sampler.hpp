#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tdro/contrastive.hpp"
#include "tdro/dro.hpp"
#include "tdro/rng.hpp"

namespace tdro {

// Corpus with texts already hashed to bucket ids, the form the samplers and
// trainers consume.
struct TokenizedTriple {
  std::vector<std::uint32_t> query;
  std::vector<std::uint32_t> positive;
  std::vector<std::vector<std::uint32_t>> negatives;
};

struct TokenizedDataset {
  std::string task;
  std::vector<TokenizedTriple> triples;
};

struct TaskDataset;  // corpus.hpp
std::vector<TokenizedDataset> tokenize_corpus(const std::vector<TaskDataset>& corpus,
                                              const TokenizerConfig& cfg);

// One single-shard batch containing every task each step: floor(B/k) items
// per task plus one extra for the first (B mod k) tasks in an order that
// rotates with the step index. Items are drawn uniformly with replacement.
ShardedBatch stratified_dro_batch(const std::vector<TokenizedDataset>& datasets,
                                  std::uint32_t batch_size, Rng& rng, std::uint64_t step);

// Task-homogeneous batch: one task drawn from the categorical distribution
// given by `weights`, then W shards of B/W items each, uniform with
// replacement. Reports the drawn task through `drawn_task` when non-null.
ShardedBatch homogeneous_batch(const std::vector<TokenizedDataset>& datasets,
                               std::span<const std::pair<std::string, double>> weights,
                               std::uint32_t batch_size, std::uint32_t shards, Rng& rng,
                               std::string* drawn_task = nullptr);

// Learned weights packaged for the fine-tuning stage.
struct TransferArtifact {
  std::string strategy;  // "top" | "ratio" | "loss"
  std::vector<std::string> kept;                              // "top" only
  std::vector<std::pair<std::string, double>> weights;        // simplex over active tasks
  std::vector<std::pair<std::string, double>> loss_multipliers;  // "loss" only
  std::uint64_t source_step = 0;

  static TransferArtifact uniform(std::span<const std::string> tasks);
  void validate() const;
  double multiplier_of(const std::string& task) const;  // 1.0 when absent
};

// Keep the top max(1, round-half-up(p*k)) tasks by weight (ties broken by
// label, ascending) and sample them uniformly.
TransferArtifact transfer_top_fraction(const DomainWeights& w, double p);
// Ablation twin of the above with the ranking reversed.
TransferArtifact transfer_bottom_fraction(const DomainWeights& w, double p);
// Sampling weights = alpha, verbatim.
TransferArtifact transfer_ratio(const DomainWeights& w);
// Uniform sampling; per-task loss multiplier k*alpha_g.
TransferArtifact transfer_loss_scale(const DomainWeights& w);

void save_artifact(const std::filesystem::path& path, const TransferArtifact& a);
TransferArtifact load_artifact(const std::filesystem::path& path);

}  // namespace tdro
