#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "tdro/errors.hpp"

namespace tdro {

struct TrainingTriple {
  std::string task;
  std::string query;     // any instruction prefix is already part of the text
  std::string positive;
  std::vector<std::string> hard_negatives;  // non-empty
};

struct TaskDataset {
  std::string task;
  std::vector<TrainingTriple> triples;

  std::size_t size() const { return triples.size(); }
};

// Knobs for the seeded multi-domain generator. negative_hardness is the
// fraction of positive tokens copied into each hard negative, which dials
// per-task loss scale smoothly. duplication is the fraction of a task's
// triples that are near-duplicates (10% token dropout) of a donor task's
// triples; donor = the zero-duplication task with the closest hardness.
struct SyntheticSpec {
  std::uint32_t n_tasks = 6;
  std::uint32_t per_task_size = 512;
  std::uint32_t vocab_size = 4096;
  std::uint32_t query_len = 8;
  std::uint32_t doc_len = 16;
  std::vector<double> negative_hardness;  // per task, in [0,1]
  std::vector<double> duplication;        // per task, in [0,1]
  std::uint32_t negatives_per_triple = 2;
  std::uint32_t eval_per_task = 0;  // 0 -> max(4, per_task_size/8)
  std::uint64_t seed = 42;

  void validate() const;
  std::uint32_t effective_eval_per_task() const;
};

struct EvalQuery {
  std::string qid;
  std::string text;
};
struct EvalDoc {
  std::string did;
  std::string text;
};

struct EvalSet {
  std::string task;
  std::vector<EvalQuery> queries;
  std::vector<EvalDoc> documents;
  std::map<std::string, std::set<std::string>> qrels;  // qid -> relevant dids

  void validate() const;
};

// JSONL triples, one {"task","query","pos","negs"} record per line, grouped
// by task label with file order preserved inside each task.
std::vector<TaskDataset> load_triples(const std::filesystem::path& path);
void save_triples(const std::filesystem::path& path, const std::vector<TaskDataset>& data);

// JSONL eval records discriminated by a "kind" field (query | doc | qrel).
std::vector<EvalSet> load_evalsets(const std::filesystem::path& path);
void save_evalsets(const std::filesystem::path& path, const std::vector<EvalSet>& sets);

SyntheticSpec load_synthetic_spec(const std::filesystem::path& path);

// Deterministic function of the spec. Tasks are generated from independent
// sub-seeded streams, so per-task generation is order-independent.
std::pair<std::vector<TaskDataset>, std::vector<EvalSet>> generate_synthetic(
    const SyntheticSpec& spec);

// Splits off an eval fraction. Train keeps max(1, floor(size*(1-fraction)))
// triples; the eval side becomes a closed-pool EvalSet where each query's
// own positive is the sole relevant document.
std::pair<TaskDataset, EvalSet> holdout_split(const TaskDataset& ds, double fraction,
                                              std::uint64_t seed);

}  // namespace tdro
