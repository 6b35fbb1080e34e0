#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tdro/corpus.hpp"
#include "tdro/encoder.hpp"

namespace tdro {

struct RankedList {
  std::string qid;
  std::vector<std::string> doc_ids;  // descending cosine, ties by ascending id
};

// Exact full sort over the pool; all vectors must be unit-norm.
RankedList brute_force_rank(const std::string& qid, const Vec& query,
                            std::span<const std::string> doc_ids,
                            std::span<const Vec> doc_vectors);

// Binary gains: DCG = sum over relevant hits at rank i<=k of 1/log2(i+1),
// normalized by the ideal DCG for |relevant| items.
double ndcg_at_k(const RankedList& ranking, const std::set<std::string>& relevant,
                 std::uint32_t k);
double recall_at_k(const RankedList& ranking, const std::set<std::string>& relevant,
                   std::uint32_t k);
double accuracy_at_k(const RankedList& ranking, const std::set<std::string>& relevant,
                     std::uint32_t k);

struct PerQueryMetric {
  std::string task;
  std::string qid;
  std::string metric;  // "ndcg" | "recall" | "accuracy"
  std::uint32_t cutoff = 0;
  double value = 0.0;
};

struct EvalReport {
  std::string checkpoint_id;
  std::vector<std::uint32_t> cutoffs;
  // task -> "metric@cutoff" -> mean over the task's queries
  std::map<std::string, std::map<std::string, double>> per_task;
  std::map<std::string, double> macro;  // unweighted mean over tasks
  std::vector<PerQueryMetric> per_query;
};

EvalReport evaluate(const EncoderParams& params, const std::vector<EvalSet>& sets,
                    std::span<const std::uint32_t> cutoffs, std::uint32_t threads = 1);

// Two-sided paired t-test on per-query differences. Zero-variance
// convention: p = 1 when the means are equal, otherwise p = 0.
double paired_significance(std::span<const double> a, std::span<const double> b);

// Regularized incomplete beta, exposed for the significance test's oracle
// checks.
double incomplete_beta(double a, double b, double x);

void save_report(const std::filesystem::path& json_path, const std::filesystem::path& csv_path,
                 const EvalReport& report);

}  // namespace tdro
