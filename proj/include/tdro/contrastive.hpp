#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "tdro/encoder.hpp"

namespace tdro {

struct ContrastiveConfig {
  double temperature = 0.05;  // paper-scale value 0.002 is selectable
};

struct BatchItem {
  std::vector<std::uint32_t> query;
  std::vector<std::uint32_t> positive;
  std::vector<std::vector<std::uint32_t>> negatives;  // hard negatives, >= 1
  std::string task;
};

// Shard layout mirrors the two batching regimes: the robust-optimization
// stage uses a single shard with mixed task labels, fine-tuning uses W
// shards that all hold items of one task.
struct ShardedBatch {
  std::vector<std::vector<BatchItem>> shards;

  std::size_t item_count() const {
    std::size_t n = 0;
    for (const auto& s : shards) n += s.size();
    return n;
  }
};

struct InfoNceResult {
  std::vector<double> losses;  // per item, shard-major batch order, unscaled
  GradientSet grads;           // sum over items of scale_i * d(loss_i)/d(params)
};

// Cached forward pass for the hard-negatives regime, so the caller can
// inspect losses (and decide per-item gradient scales) before backprop.
struct HardForwardCache {
  struct Item {
    Encoded query, positive;
    std::vector<Encoded> negatives;
    double p_pos = 0.0;           // softmax weight of the positive
    std::vector<double> p_negs;   // softmax weights of the hard negatives
  };
  std::vector<double> losses;
  std::vector<Item> items;
};

// InfoNCE with hard negatives only (single shard; in-batch/cross-batch
// negatives deliberately absent in this regime).
HardForwardCache infonce_hard_forward(const EncoderParams& p, const ShardedBatch& batch,
                                      const ContrastiveConfig& cfg);
GradientSet infonce_hard_backward(const EncoderParams& p, const ShardedBatch& batch,
                                  const ContrastiveConfig& cfg, const HardForwardCache& fwd,
                                  std::span<const double> item_scales = {});
InfoNceResult infonce_hard(const EncoderParams& p, const ShardedBatch& batch,
                           const ContrastiveConfig& cfg,
                           std::span<const double> item_scales = {});
std::vector<double> infonce_hard_losses(const EncoderParams& p, const ShardedBatch& batch,
                                        const ContrastiveConfig& cfg);

// Full fine-tuning regime: hard negatives plus the positives of every other
// item, in-shard (in-batch) and cross-shard (cross-batch). All items must
// share one task label. Gradients flow to every participating document.
InfoNceResult infonce_full(const EncoderParams& p, const ShardedBatch& batch,
                           const ContrastiveConfig& cfg,
                           std::span<const double> item_scales = {});

// Arithmetic mean of losses per task label, summed in batch order.
std::map<std::string, double> group_mean_losses(std::span<const double> losses,
                                                std::span<const std::string> labels);

}  // namespace tdro
