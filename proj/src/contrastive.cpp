#include "tdro/contrastive.hpp"

#include <algorithm>
#include <cmath>

namespace tdro {

namespace {

void check_cfg(const ContrastiveConfig& cfg) {
  if (!(cfg.temperature > 0.0)) throw ConfigError("temperature must be positive");
}

// loss = logsumexp(z_pos, z_negs...) - z_pos, with max subtraction. When the
// positive holds the max the log1p form is used instead, which keeps losses
// far below machine epsilon exact. Also fills the softmax weights used by
// the backward pass.
double stabilized_loss(double z_pos, std::span<const double> z_negs, double& p_pos,
                       std::vector<double>& p_negs) {
  double m = z_pos;
  for (double z : z_negs) m = std::max(m, z);
  p_negs.resize(z_negs.size());
  if (m == z_pos) {
    double tail = 0.0;
    for (std::size_t j = 0; j < z_negs.size(); ++j) {
      p_negs[j] = std::exp(z_negs[j] - z_pos);
      tail += p_negs[j];
    }
    const double inv = 1.0 / (1.0 + tail);
    p_pos = inv;
    for (double& p : p_negs) p *= inv;
    return std::log1p(tail);
  }
  double sum = std::exp(z_pos - m);
  for (std::size_t j = 0; j < z_negs.size(); ++j) {
    p_negs[j] = std::exp(z_negs[j] - m);
    sum += p_negs[j];
  }
  const double inv = 1.0 / sum;
  p_pos = std::exp(z_pos - m) * inv;
  for (double& p : p_negs) p *= inv;
  return m + std::log(sum) - z_pos;
}

void axpy(Vec& acc, double a, const Vec& x) {
  for (std::size_t i = 0; i < x.size(); ++i) acc[i] += a * x[i];
}

std::vector<const BatchItem*> flatten(const ShardedBatch& batch) {
  std::vector<const BatchItem*> items;
  for (const auto& shard : batch.shards)
    for (const auto& it : shard) items.push_back(&it);
  return items;
}

void check_scales(std::span<const double> scales, std::size_t n) {
  if (!scales.empty() && scales.size() != n)
    throw LengthMismatch("item_scales size does not match item count");
}

}  // namespace

HardForwardCache infonce_hard_forward(const EncoderParams& p, const ShardedBatch& batch,
                                      const ContrastiveConfig& cfg) {
  check_cfg(cfg);
  if (batch.shards.size() != 1)
    throw LengthMismatch("hard-negative regime expects a single shard");
  const auto& items = batch.shards[0];
  const double inv_tau = 1.0 / cfg.temperature;

  HardForwardCache cache;
  cache.items.resize(items.size());
  cache.losses.resize(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].negatives.empty()) throw NoNegatives(i);
    auto& ci = cache.items[i];
    ci.query = encode_full(p, items[i].query);
    ci.positive = encode_full(p, items[i].positive);
    ci.negatives.reserve(items[i].negatives.size());
    double z_pos = similarity(ci.query.unit, ci.positive.unit) * inv_tau;
    std::vector<double> z_negs(items[i].negatives.size());
    for (std::size_t j = 0; j < items[i].negatives.size(); ++j) {
      ci.negatives.push_back(encode_full(p, items[i].negatives[j]));
      z_negs[j] = similarity(ci.query.unit, ci.negatives[j].unit) * inv_tau;
    }
    cache.losses[i] = stabilized_loss(z_pos, z_negs, ci.p_pos, ci.p_negs);
    if (!std::isfinite(cache.losses[i])) throw NonFinite("hard-negative loss");
  }
  return cache;
}

GradientSet infonce_hard_backward(const EncoderParams& p, const ShardedBatch& batch,
                                  const ContrastiveConfig& cfg, const HardForwardCache& fwd,
                                  std::span<const double> item_scales) {
  const auto& items = batch.shards.at(0);
  check_scales(item_scales, items.size());
  const double inv_tau = 1.0 / cfg.temperature;

  GradientSet grads(p.dim);
  Vec cot_q(p.dim), cot_doc(p.dim);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& ci = fwd.items[i];
    const double scale = item_scales.empty() ? 1.0 : item_scales[i];
    if (scale == 0.0) continue;

    std::fill(cot_q.begin(), cot_q.end(), 0.0);
    // d(loss)/d(z_pos) = p_pos - 1, d(loss)/d(z_neg_j) = p_neg_j; z = s/tau.
    const double d_pos = scale * (ci.p_pos - 1.0) * inv_tau;
    axpy(cot_q, d_pos, ci.positive.unit);
    std::fill(cot_doc.begin(), cot_doc.end(), 0.0);
    axpy(cot_doc, d_pos, ci.query.unit);
    encode_backward(p, items[i].positive, ci.positive, cot_doc, grads);

    for (std::size_t j = 0; j < ci.negatives.size(); ++j) {
      const double d_neg = scale * ci.p_negs[j] * inv_tau;
      axpy(cot_q, d_neg, ci.negatives[j].unit);
      std::fill(cot_doc.begin(), cot_doc.end(), 0.0);
      axpy(cot_doc, d_neg, ci.query.unit);
      encode_backward(p, items[i].negatives[j], ci.negatives[j], cot_doc, grads);
    }
    encode_backward(p, items[i].query, ci.query, cot_q, grads);
  }
  if (!grads.all_finite()) throw NonFinite("hard-negative gradients");
  return grads;
}

InfoNceResult infonce_hard(const EncoderParams& p, const ShardedBatch& batch,
                           const ContrastiveConfig& cfg, std::span<const double> item_scales) {
  auto fwd = infonce_hard_forward(p, batch, cfg);
  InfoNceResult out{{}, infonce_hard_backward(p, batch, cfg, fwd, item_scales)};
  out.losses = std::move(fwd.losses);
  return out;
}

std::vector<double> infonce_hard_losses(const EncoderParams& p, const ShardedBatch& batch,
                                        const ContrastiveConfig& cfg) {
  return infonce_hard_forward(p, batch, cfg).losses;
}

InfoNceResult infonce_full(const EncoderParams& p, const ShardedBatch& batch,
                           const ContrastiveConfig& cfg, std::span<const double> item_scales) {
  check_cfg(cfg);
  const auto items = flatten(batch);
  if (items.empty()) throw LengthMismatch("empty batch");
  check_scales(item_scales, items.size());
  for (std::size_t i = 1; i < items.size(); ++i)
    if (items[i]->task != items[0]->task) throw MixedTasks();
  const double inv_tau = 1.0 / cfg.temperature;
  const std::size_t n = items.size();

  // Encode every text once; queries and positives are shared across items.
  std::vector<Encoded> queries(n), positives(n);
  std::vector<std::vector<Encoded>> negatives(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (items[i]->negatives.empty()) throw NoNegatives(i);
    queries[i] = encode_full(p, items[i]->query);
    positives[i] = encode_full(p, items[i]->positive);
    negatives[i].reserve(items[i]->negatives.size());
    for (const auto& neg : items[i]->negatives)
      negatives[i].push_back(encode_full(p, neg));
  }

  InfoNceResult out{std::vector<double>(n), GradientSet(p.dim)};
  std::vector<Vec> cot_q(n, Vec(p.dim, 0.0)), cot_pos(n, Vec(p.dim, 0.0));
  std::vector<std::vector<Vec>> cot_neg(n);
  for (std::size_t i = 0; i < n; ++i)
    cot_neg[i].assign(negatives[i].size(), Vec(p.dim, 0.0));

  std::vector<double> z_negs;
  std::vector<double> p_negs;
  for (std::size_t i = 0; i < n; ++i) {
    // Negative slots, in order: own hard negatives, then positives of the
    // other items (the in-batch/cross-batch split is by shard membership
    // and does not change the arithmetic).
    z_negs.clear();
    for (const auto& neg : negatives[i])
      z_negs.push_back(similarity(queries[i].unit, neg.unit) * inv_tau);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) z_negs.push_back(similarity(queries[i].unit, positives[j].unit) * inv_tau);

    const double z_pos = similarity(queries[i].unit, positives[i].unit) * inv_tau;
    double p_pos = 0.0;
    out.losses[i] = stabilized_loss(z_pos, z_negs, p_pos, p_negs);
    if (!std::isfinite(out.losses[i])) throw NonFinite("full-regime loss");

    const double scale = item_scales.empty() ? 1.0 : item_scales[i];
    if (scale == 0.0) continue;
    const double d_pos = scale * (p_pos - 1.0) * inv_tau;
    axpy(cot_q[i], d_pos, positives[i].unit);
    axpy(cot_pos[i], d_pos, queries[i].unit);
    std::size_t slot = 0;
    for (std::size_t m = 0; m < negatives[i].size(); ++m, ++slot) {
      const double d = scale * p_negs[slot] * inv_tau;
      axpy(cot_q[i], d, negatives[i][m].unit);
      axpy(cot_neg[i][m], d, queries[i].unit);
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = scale * p_negs[slot++] * inv_tau;
      axpy(cot_q[i], d, positives[j].unit);
      axpy(cot_pos[j], d, queries[i].unit);
    }
  }

  // Backprop each encoded text once, in batch order.
  for (std::size_t i = 0; i < n; ++i) {
    encode_backward(p, items[i]->query, queries[i], cot_q[i], out.grads);
    encode_backward(p, items[i]->positive, positives[i], cot_pos[i], out.grads);
    for (std::size_t m = 0; m < negatives[i].size(); ++m)
      encode_backward(p, items[i]->negatives[m], negatives[i][m], cot_neg[i][m], out.grads);
  }
  if (!out.grads.all_finite()) throw NonFinite("full-regime gradients");
  return out;
}

std::map<std::string, double> group_mean_losses(std::span<const double> losses,
                                                std::span<const std::string> labels) {
  if (losses.empty() || losses.size() != labels.size())
    throw LengthMismatch("losses and labels must be non-empty and equal length");
  std::map<std::string, double> sums;
  std::map<std::string, std::size_t> counts;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    sums[labels[i]] += losses[i];
    counts[labels[i]] += 1;
  }
  std::map<std::string, double> means;
  for (const auto& [task, sum] : sums)
    means[task] = sum / static_cast<double>(counts[task]);
  return means;
}

}  // namespace tdro
