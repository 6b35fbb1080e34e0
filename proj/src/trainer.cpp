#include "tdro/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "tdro/json_writer.hpp"
#include "tdro/rng.hpp"

namespace tdro {

using nlohmann::json;

void TrainConfig::validate() const {
  if (steps == 0) throw ConfigError("steps must be positive");
  if (warmup_steps >= steps) throw ConfigError("warmup must be smaller than steps");
  if (!(model_lr > 0.0)) throw ConfigError("model_lr must be positive");
  if (!(min_lr_ratio > 0.0 && min_lr_ratio <= 1.0))
    throw ConfigError("min_lr_ratio must be in (0,1]");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(weights_lr >= 0.0)) throw ConfigError("weights_lr must be non-negative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (shards == 0 || batch_size % shards != 0)
    throw ConfigError("batch_size must be divisible by shards");
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw ConfigError("smoothing must be in [0,1)");
  if (dim == 0) throw ConfigError("dim must be positive");
  if (vocab_buckets < 2 || (vocab_buckets & (vocab_buckets - 1)) != 0)
    throw ConfigError("vocab_buckets must be a power of two >= 2");
  if (!(weight_floor > 0.0)) throw ConfigError("weight_floor must be positive");
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");

  static const std::set<std::string> known = {
      "batch_size", "steps",        "warmup_steps",  "model_lr",
      "min_lr_ratio", "temperature", "weights_lr",   "shards",
      "seed",       "measurement",  "smoothing",     "dim",
      "vocab_buckets", "weight_floor", "proxy_from_reference"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown config key \"" + key + "\"");

  TrainConfig c;
  auto get_u32 = [&](const char* k, std::uint32_t& out) {
    if (j.contains(k)) out = j[k].get<std::uint32_t>();
  };
  auto get_f = [&](const char* k, double& out) {
    if (j.contains(k)) out = j[k].get<double>();
  };
  get_u32("batch_size", c.batch_size);
  get_u32("steps", c.steps);
  get_u32("warmup_steps", c.warmup_steps);
  get_f("model_lr", c.model_lr);
  get_f("min_lr_ratio", c.min_lr_ratio);
  get_f("temperature", c.temperature);
  get_f("weights_lr", c.weights_lr);
  get_u32("shards", c.shards);
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("measurement"))
    c.measurement = measurement_kind_from_string(j["measurement"].get<std::string>());
  get_f("smoothing", c.smoothing);
  get_u32("dim", c.dim);
  get_u32("vocab_buckets", c.vocab_buckets);
  get_f("weight_floor", c.weight_floor);
  if (j.contains("proxy_from_reference"))
    c.proxy_from_reference = j["proxy_from_reference"].get<bool>();
  c.validate();
  return c;
}

std::string train_config_canonical_json(const TrainConfig& cfg) {
  JsonValue doc = JsonValue::object();
  doc.set("batch_size", static_cast<std::int64_t>(cfg.batch_size));
  doc.set("steps", static_cast<std::int64_t>(cfg.steps));
  doc.set("warmup_steps", static_cast<std::int64_t>(cfg.warmup_steps));
  doc.set("model_lr", cfg.model_lr);
  doc.set("min_lr_ratio", cfg.min_lr_ratio);
  doc.set("temperature", cfg.temperature);
  doc.set("weights_lr", cfg.weights_lr);
  doc.set("shards", static_cast<std::int64_t>(cfg.shards));
  doc.set("seed", static_cast<std::int64_t>(cfg.seed));
  doc.set("measurement", to_string(cfg.measurement));
  doc.set("smoothing", cfg.smoothing);
  doc.set("dim", static_cast<std::int64_t>(cfg.dim));
  doc.set("vocab_buckets", static_cast<std::int64_t>(cfg.vocab_buckets));
  doc.set("weight_floor", cfg.weight_floor);
  doc.set("proxy_from_reference", cfg.proxy_from_reference);
  return doc.dump();
}

// ---------------------------------------------------------------------------
// schedule and optimizer

double lr_at(const LRSchedule& s, std::uint64_t step) {
  if (step > s.total) throw OutOfRange("step beyond schedule total");
  if (s.kind == LRSchedule::Kind::Constant) return s.peak;
  if (step < s.warmup)
    return s.peak * static_cast<double>(step) / static_cast<double>(s.warmup);
  const double min_lr = s.min_ratio * s.peak;
  const double progress = static_cast<double>(step - s.warmup) /
                          static_cast<double>(s.total - s.warmup);
  return min_lr + 0.5 * (1.0 + std::cos(M_PI * progress)) * (s.peak - min_lr);
}

void adamw_step(EncoderParams& params, const GradientSet& grads, AdamWState& state,
                double lr) {
  if (grads.dim != params.dim) throw LengthMismatch("gradient dim vs params dim");
  if (!grads.all_finite()) throw NonFinite("gradients fed to adamw_step");
  state.step += 1;
  const auto& c = state.cfg;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));

  for (const auto& [bucket, g] : grads.rows) {
    auto& [m, v] = state.moments[bucket];
    if (m.empty()) {
      m.assign(params.dim, 0.0);
      v.assign(params.dim, 0.0);
    }
    auto row = params.row(bucket);
    for (std::uint32_t i = 0; i < params.dim; ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      row[i] -= lr * (m_hat / (std::sqrt(v_hat) + c.eps) + c.weight_decay * row[i]);
    }
  }
}

// ---------------------------------------------------------------------------
// loops

namespace {

// Mean hard-regime loss per task over a deterministic sample, the
// diagnostic emitted with every checkpoint.
std::map<std::string, double> final_task_losses(const EncoderParams& params,
                                                const std::vector<TokenizedDataset>& corpus,
                                                const ContrastiveConfig& ccfg) {
  constexpr std::size_t kMaxPerTask = 256;
  constexpr std::size_t kChunk = 128;
  std::map<std::string, double> out;
  for (const auto& ds : corpus) {
    const std::size_t n = std::min(ds.triples.size(), kMaxPerTask);
    double sum = 0.0;
    for (std::size_t start = 0; start < n; start += kChunk) {
      ShardedBatch batch;
      batch.shards.resize(1);
      for (std::size_t i = start; i < std::min(n, start + kChunk); ++i) {
        const auto& t = ds.triples[i];
        batch.shards[0].push_back(BatchItem{t.query, t.positive, t.negatives, ds.task});
      }
      for (double l : infonce_hard_losses(params, batch, ccfg)) sum += l;
    }
    out[ds.task] = sum / static_cast<double>(n);
  }
  return out;
}

}  // namespace

TrainResult finetune(const std::vector<TaskDataset>& corpus, const TransferArtifact& artifact,
                     const TrainConfig& cfg, const MetricsSink& sink) {
  cfg.validate();
  artifact.validate();
  if (corpus.empty()) throw EmptyDataset("<corpus>");

  const auto tokenized = tokenize_corpus(corpus, cfg.tokenizer());
  std::set<std::string> present;
  for (const auto& ds : tokenized) present.insert(ds.task);
  for (const auto& [task, _] : artifact.weights)
    if (!present.count(task)) throw MissingTask(task);

  EncoderParams params = init_params(cfg.tokenizer(), cfg.dim, derive_seed(cfg.seed, "init"));
  AdamWState opt;
  LRSchedule sched{LRSchedule::Kind::CosineWithWarmup, cfg.model_lr, cfg.min_lr_ratio,
                   cfg.warmup_steps, cfg.steps};
  Rng rng(derive_seed(cfg.seed, "sampler"));
  const ContrastiveConfig ccfg = cfg.contrastive();

  std::vector<double> scales;
  for (std::uint64_t step = 1; step <= cfg.steps; ++step) {
    std::string task;
    ShardedBatch batch =
        homogeneous_batch(tokenized, artifact.weights, cfg.batch_size, cfg.shards, rng, &task);

    scales.clear();
    std::span<const double> scale_view{};
    if (!artifact.loss_multipliers.empty()) {
      scales.assign(batch.item_count(), artifact.multiplier_of(task));
      scale_view = scales;
    }
    InfoNceResult res = infonce_full(params, batch, ccfg, scale_view);

    const double lr = lr_at(sched, step);
    adamw_step(params, res.grads, opt, lr);

    if (sink) {
      double mean = 0.0;
      for (double l : res.losses) mean += l;
      mean /= static_cast<double>(res.losses.size());
      sink(StepMetrics{step, lr, {{task, mean}}});
    }
  }
  params.step = cfg.steps;
  params.seed = cfg.seed;
  auto losses = final_task_losses(params, tokenized, ccfg);
  return TrainResult{std::move(params), std::move(losses)};
}

TrainResult train_reference(const std::vector<TaskDataset>& corpus, const TrainConfig& cfg,
                            const MetricsSink& sink) {
  if (corpus.size() < 2) throw ConfigError("reference training needs >= 2 tasks");
  std::vector<std::string> tasks;
  for (const auto& ds : corpus) tasks.push_back(ds.task);
  return finetune(corpus, TransferArtifact::uniform(tasks), cfg, sink);
}

TdroResult run_tdro(const std::vector<TaskDataset>& corpus, const EncoderParams& reference,
                    const TrainConfig& cfg, const MetricsSink& sink,
                    const EncoderParams* proxy_init) {
  cfg.validate();
  if (corpus.size() < 2) throw ConfigError("tdro needs >= 2 tasks");
  if (reference.vocab_buckets != cfg.vocab_buckets)
    throw ConfigError("reference checkpoint bucket count differs from config");
  if (proxy_init && proxy_init->vocab_buckets != cfg.vocab_buckets)
    throw ConfigError("proxy init checkpoint bucket count differs from config");

  const auto tokenized = tokenize_corpus(corpus, cfg.tokenizer());
  std::vector<std::string> tasks;
  for (const auto& ds : tokenized) tasks.push_back(ds.task);

  EncoderParams proxy =
      proxy_init ? *proxy_init
      : cfg.proxy_from_reference
          ? reference
          : init_params(cfg.tokenizer(), cfg.dim, derive_seed(cfg.seed, "init"));
  DomainWeights weights =
      DomainWeights::uniform(tasks, cfg.weights_lr, cfg.weight_floor);

  AdamWState opt;
  LRSchedule sched{LRSchedule::Kind::CosineWithWarmup, cfg.model_lr, cfg.min_lr_ratio,
                   cfg.warmup_steps, cfg.steps};
  Rng rng(derive_seed(cfg.seed, "sampler"));
  const ContrastiveConfig ccfg = cfg.contrastive();

  TdroResult out;
  out.trajectory.steps.push_back(0);
  out.trajectory.weights.push_back(weights);

  std::map<std::string, double> smoothed_proxy, smoothed_ref;
  std::vector<std::string> labels;
  std::vector<double> scales;
  for (std::uint64_t step = 1; step <= cfg.steps; ++step) {
    ShardedBatch batch = stratified_dro_batch(tokenized, cfg.batch_size, rng, step - 1);
    const auto& items = batch.shards[0];

    HardForwardCache proxy_fwd = infonce_hard_forward(proxy, batch, ccfg);
    std::vector<double> ref_losses = infonce_hard_losses(reference, batch, ccfg);

    labels.clear();
    for (const auto& it : items) labels.push_back(it.task);
    auto proxy_means = group_mean_losses(proxy_fwd.losses, labels);
    auto ref_means = group_mean_losses(ref_losses, labels);

    // Log the raw per-step means; smoothing (when on) feeds the update only.
    std::map<std::string, std::uint64_t> counts;
    for (const auto& l : labels) counts[l] += 1;
    for (const auto& task : tasks)
      out.losslog.push_back(
          LossLogEntry{step, task, proxy_means[task], ref_means[task], counts[task]});

    if (cfg.smoothing > 0.0) {
      for (const auto& task : tasks) {
        auto blend = [&](std::map<std::string, double>& prev,
                         std::map<std::string, double>& cur) {
          auto it = prev.find(task);
          cur[task] = it == prev.end()
                          ? cur[task]
                          : cfg.smoothing * it->second + (1.0 - cfg.smoothing) * cur[task];
          prev[task] = cur[task];
        };
        blend(smoothed_proxy, proxy_means);
        blend(smoothed_ref, ref_means);
      }
    }

    auto m = measure(proxy_means, ref_means, weights.tasks, cfg.measurement);
    auto mn = normalize_measurements(m);
    weights = update_weights(weights, mn);

    MeasurementRecord rec;
    rec.step = step;
    rec.kind = cfg.measurement;
    rec.tasks = weights.tasks;
    for (const auto& task : weights.tasks) {
      rec.proxy_mean.push_back(proxy_means[task]);
      rec.ref_mean.push_back(ref_means[task]);
    }
    rec.measurement = std::move(m);
    out.trajectory.steps.push_back(step);
    out.trajectory.weights.push_back(weights);
    out.trajectory.records.push_back(std::move(rec));

    // Proxy step with each item's gradient scaled by its fresh task weight.
    scales.clear();
    for (const auto& it : items) scales.push_back(weights.weight_of(it.task));
    GradientSet grads = infonce_hard_backward(proxy, batch, ccfg, proxy_fwd, scales);
    const double lr = lr_at(sched, step);
    adamw_step(proxy, grads, opt, lr);

    if (sink) {
      StepMetrics sm{step, lr, {}};
      for (const auto& task : tasks) sm.task_losses.emplace_back(task, proxy_means[task]);
      sink(sm);
    }
  }
  proxy.step = cfg.steps;
  proxy.seed = cfg.seed;
  out.final_weights = weights;
  out.proxy = std::move(proxy);
  return out;
}

}  // namespace tdro
