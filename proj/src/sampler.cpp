#include "tdro/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tdro/corpus.hpp"
#include "tdro/json_writer.hpp"

namespace tdro {

using nlohmann::json;

std::vector<TokenizedDataset> tokenize_corpus(const std::vector<TaskDataset>& corpus,
                                              const TokenizerConfig& cfg) {
  std::vector<TokenizedDataset> out;
  out.reserve(corpus.size());
  for (const auto& ds : corpus) {
    TokenizedDataset td{ds.task, {}};
    td.triples.reserve(ds.triples.size());
    for (const auto& t : ds.triples) {
      TokenizedTriple tt;
      tt.query = tokenize(t.query, cfg);
      tt.positive = tokenize(t.positive, cfg);
      tt.negatives.reserve(t.hard_negatives.size());
      for (const auto& n : t.hard_negatives) tt.negatives.push_back(tokenize(n, cfg));
      td.triples.push_back(std::move(tt));
    }
    out.push_back(std::move(td));
  }
  return out;
}

namespace {

BatchItem draw_item(const TokenizedDataset& ds, Rng& rng) {
  const auto& t = ds.triples[rng.uniform_int(ds.triples.size())];
  return BatchItem{t.query, t.positive, t.negatives, ds.task};
}

}  // namespace

ShardedBatch stratified_dro_batch(const std::vector<TokenizedDataset>& datasets,
                                  std::uint32_t batch_size, Rng& rng, std::uint64_t step) {
  const std::size_t k = datasets.size();
  if (k < 1) throw EmptyDataset("<none>");
  if (batch_size < k) throw ConfigError("batch size must be >= number of tasks");
  for (const auto& ds : datasets)
    if (ds.triples.empty()) throw EmptyDataset(ds.task);

  const std::uint32_t base = batch_size / static_cast<std::uint32_t>(k);
  const std::uint32_t extras = batch_size % static_cast<std::uint32_t>(k);

  std::vector<std::uint32_t> counts(k, base);
  for (std::uint32_t i = 0; i < extras; ++i) counts[(step + i) % k] += 1;

  ShardedBatch batch;
  batch.shards.resize(1);
  batch.shards[0].reserve(batch_size);
  for (std::size_t g = 0; g < k; ++g)
    for (std::uint32_t i = 0; i < counts[g]; ++i)
      batch.shards[0].push_back(draw_item(datasets[g], rng));
  return batch;
}

ShardedBatch homogeneous_batch(const std::vector<TokenizedDataset>& datasets,
                               std::span<const std::pair<std::string, double>> weights,
                               std::uint32_t batch_size, std::uint32_t shards, Rng& rng,
                               std::string* drawn_task) {
  if (weights.empty()) throw ConfigError("no sampling weights");
  if (shards < 1 || batch_size % shards != 0)
    throw ConfigError("batch size must be divisible by the shard count");
  double total = 0.0;
  for (const auto& [task, w] : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("negative sampling weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-6) throw ConfigError("sampling weights must sum to 1");

  // Categorical draw by cumulative sum.
  const double u = rng.uniform01() * total;
  double acc = 0.0;
  std::size_t pick = weights.size() - 1;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i].second;
    if (u < acc) {
      pick = i;
      break;
    }
  }
  const std::string& task = weights[pick].first;
  const TokenizedDataset* ds = nullptr;
  for (const auto& d : datasets)
    if (d.task == task) ds = &d;
  if (!ds) throw MissingTask(task);
  if (ds->triples.empty()) throw EmptyDataset(task);
  if (drawn_task) *drawn_task = task;

  ShardedBatch batch;
  batch.shards.resize(shards);
  const std::uint32_t per_shard = batch_size / shards;
  for (auto& shard : batch.shards) {
    shard.reserve(per_shard);
    for (std::uint32_t i = 0; i < per_shard; ++i) shard.push_back(draw_item(*ds, rng));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// transfer strategies

TransferArtifact TransferArtifact::uniform(std::span<const std::string> tasks) {
  TransferArtifact a;
  a.strategy = "ratio";
  const double w = 1.0 / static_cast<double>(tasks.size());
  for (const auto& t : tasks) a.weights.emplace_back(t, w);
  a.validate();
  return a;
}

void TransferArtifact::validate() const {
  if (weights.empty()) throw ConfigError("transfer artifact has no sampling weights");
  double sum = 0.0;
  for (const auto& [task, w] : weights) {
    if (!(w >= 0.0) || !std::isfinite(w))
      throw ConfigError("bad sampling weight for " + task);
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ConfigError("artifact sampling weights must sum to 1");
  for (const auto& [task, m] : loss_multipliers)
    if (!(m > 0.0) || !std::isfinite(m))
      throw ConfigError("loss multiplier must be positive for " + task);
}

double TransferArtifact::multiplier_of(const std::string& task) const {
  for (const auto& [t, m] : loss_multipliers)
    if (t == task) return m;
  return 1.0;
}

namespace {

// Tasks ordered by weight descending, ties by label ascending.
std::vector<std::size_t> rank_by_weight(const DomainWeights& w, bool descending) {
  std::vector<std::size_t> order(w.tasks.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (w.alpha[a] != w.alpha[b])
      return descending ? w.alpha[a] > w.alpha[b] : w.alpha[a] < w.alpha[b];
    return w.tasks[a] < w.tasks[b];
  });
  return order;
}

TransferArtifact select_fraction(const DomainWeights& w, double p, bool top) {
  w.validate();
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("fraction must be in (0,1]");
  const double k = static_cast<double>(w.tasks.size());
  // round-half-up
  const std::size_t keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(p * k + 0.5)));

  auto order = rank_by_weight(w, top);
  order.resize(std::min(keep, order.size()));

  TransferArtifact a;
  a.strategy = top ? "top" : "bottom";
  for (std::size_t i : order) a.kept.push_back(w.tasks[i]);
  std::sort(a.kept.begin(), a.kept.end());
  const double uw = 1.0 / static_cast<double>(a.kept.size());
  for (const auto& t : a.kept) a.weights.emplace_back(t, uw);
  a.validate();
  return a;
}

}  // namespace

TransferArtifact transfer_top_fraction(const DomainWeights& w, double p) {
  return select_fraction(w, p, true);
}

TransferArtifact transfer_bottom_fraction(const DomainWeights& w, double p) {
  return select_fraction(w, p, false);
}

TransferArtifact transfer_ratio(const DomainWeights& w) {
  w.validate();
  TransferArtifact a;
  a.strategy = "ratio";
  for (std::size_t g = 0; g < w.tasks.size(); ++g)
    a.weights.emplace_back(w.tasks[g], w.alpha[g]);
  a.validate();
  return a;
}

TransferArtifact transfer_loss_scale(const DomainWeights& w) {
  w.validate();
  TransferArtifact a;
  a.strategy = "loss";
  const double k = static_cast<double>(w.tasks.size());
  for (std::size_t g = 0; g < w.tasks.size(); ++g) {
    a.weights.emplace_back(w.tasks[g], 1.0 / k);
    a.loss_multipliers.emplace_back(w.tasks[g], k * w.alpha[g]);
  }
  a.validate();
  return a;
}

// ---------------------------------------------------------------------------
// artifact file

void save_artifact(const std::filesystem::path& path, const TransferArtifact& a) {
  JsonValue doc = JsonValue::object();
  doc.set("strategy", a.strategy);
  if (a.kept.empty()) {
    doc.set("kept", nullptr);
  } else {
    JsonValue kept = JsonValue::array();
    for (const auto& t : a.kept) kept.push_back(t);
    doc.set("kept", std::move(kept));
  }
  JsonValue weights = JsonValue::object();
  for (const auto& [task, w] : a.weights) weights.set(task, w);
  doc.set("weights", std::move(weights));
  if (a.loss_multipliers.empty()) {
    doc.set("loss_multipliers", nullptr);
  } else {
    JsonValue mult = JsonValue::object();
    for (const auto& [task, m] : a.loss_multipliers) mult.set(task, m);
    doc.set("loss_multipliers", std::move(mult));
  }
  doc.set("source_step", static_cast<std::int64_t>(a.source_step));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << doc.dump(2);
}

TransferArtifact load_artifact(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw IoError("bad artifact file: " + std::string(e.what()));
  }
  TransferArtifact a;
  a.strategy = j.at("strategy").get<std::string>();
  if (j.contains("kept") && !j["kept"].is_null())
    a.kept = j["kept"].get<std::vector<std::string>>();
  for (const auto& [task, w] : j.at("weights").items())
    a.weights.emplace_back(task, w.get<double>());
  if (j.contains("loss_multipliers") && !j["loss_multipliers"].is_null())
    for (const auto& [task, m] : j["loss_multipliers"].items())
      a.loss_multipliers.emplace_back(task, m.get<double>());
  if (j.contains("source_step")) a.source_step = j["source_step"].get<std::uint64_t>();
  a.validate();
  return a;
}

}  // namespace tdro
