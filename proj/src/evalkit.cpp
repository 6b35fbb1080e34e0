#include "tdro/evalkit.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <thread>
#include <tuple>

#include "tdro/json_writer.hpp"

namespace tdro {

RankedList brute_force_rank(const std::string& qid, const Vec& query,
                            std::span<const std::string> doc_ids,
                            std::span<const Vec> doc_vectors) {
  if (doc_ids.empty()) throw EmptyPool();
  if (doc_ids.size() != doc_vectors.size()) throw LengthMismatch("doc ids vs vectors");

  std::vector<std::pair<double, std::size_t>> scored(doc_ids.size());
  for (std::size_t i = 0; i < doc_ids.size(); ++i)
    scored[i] = {similarity(query, doc_vectors[i]), i};
  std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return doc_ids[a.second] < doc_ids[b.second];
  });

  RankedList out;
  out.qid = qid;
  out.doc_ids.reserve(scored.size());
  for (const auto& [_, i] : scored) out.doc_ids.push_back(doc_ids[i]);
  return out;
}

namespace {

void check_metric_args(const RankedList& ranking, const std::set<std::string>& relevant,
                       std::uint32_t k) {
  if (k < 1) throw OutOfRange("cutoff must be >= 1");
  if (relevant.empty()) throw NoRelevant(ranking.qid);
}

}  // namespace

double ndcg_at_k(const RankedList& ranking, const std::set<std::string>& relevant,
                 std::uint32_t k) {
  check_metric_args(ranking, relevant, k);
  double dcg = 0.0;
  const std::size_t depth = std::min<std::size_t>(k, ranking.doc_ids.size());
  for (std::size_t i = 0; i < depth; ++i)
    if (relevant.count(ranking.doc_ids[i]))
      dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  double ideal = 0.0;
  const std::size_t ideal_depth = std::min<std::size_t>(k, relevant.size());
  for (std::size_t i = 0; i < ideal_depth; ++i)
    ideal += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  return dcg / ideal;
}

double recall_at_k(const RankedList& ranking, const std::set<std::string>& relevant,
                   std::uint32_t k) {
  check_metric_args(ranking, relevant, k);
  std::size_t hits = 0;
  const std::size_t depth = std::min<std::size_t>(k, ranking.doc_ids.size());
  for (std::size_t i = 0; i < depth; ++i)
    if (relevant.count(ranking.doc_ids[i])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double accuracy_at_k(const RankedList& ranking, const std::set<std::string>& relevant,
                     std::uint32_t k) {
  check_metric_args(ranking, relevant, k);
  const std::size_t depth = std::min<std::size_t>(k, ranking.doc_ids.size());
  for (std::size_t i = 0; i < depth; ++i)
    if (relevant.count(ranking.doc_ids[i])) return 1.0;
  return 0.0;
}

// ---------------------------------------------------------------------------
// evaluation driver

namespace {

void parallel_for(std::size_t n, std::uint32_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
  };
  std::vector<std::thread> pool;
  const std::uint32_t use = std::min<std::uint32_t>(threads, static_cast<std::uint32_t>(n));
  pool.reserve(use);
  for (std::uint32_t t = 0; t < use; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

}  // namespace

EvalReport evaluate(const EncoderParams& params, const std::vector<EvalSet>& sets,
                    std::span<const std::uint32_t> cutoffs, std::uint32_t threads) {
  if (cutoffs.empty()) throw ConfigError("need at least one cutoff");
  const TokenizerConfig tok{params.vocab_buckets, true};
  static const char* kMetrics[] = {"ndcg", "recall", "accuracy"};

  EvalReport report;
  report.cutoffs.assign(cutoffs.begin(), cutoffs.end());
  char ckpt[64];
  std::snprintf(ckpt, sizeof(ckpt), "seed=%llu,step=%llu",
                static_cast<unsigned long long>(params.seed),
                static_cast<unsigned long long>(params.step));
  report.checkpoint_id = ckpt;

  for (const auto& es : sets) {
    es.validate();
    std::vector<std::string> doc_ids(es.documents.size());
    std::vector<Vec> doc_vecs(es.documents.size());
    parallel_for(es.documents.size(), threads, [&](std::size_t i) {
      doc_ids[i] = es.documents[i].did;
      doc_vecs[i] = encode(params, tokenize(es.documents[i].text, tok));
    });

    // Slot per (query, metric, cutoff), filled by index: thread-count
    // independent results.
    const std::size_t per_query_slots = 3 * cutoffs.size();
    std::vector<double> values(es.queries.size() * per_query_slots);
    parallel_for(es.queries.size(), threads, [&](std::size_t qi) {
      const auto& q = es.queries[qi];
      const Vec qv = encode(params, tokenize(q.text, tok));
      const RankedList ranked = brute_force_rank(q.qid, qv, doc_ids, doc_vecs);
      const auto& relevant = es.qrels.at(q.qid);
      std::size_t slot = qi * per_query_slots;
      for (std::uint32_t c : cutoffs) {
        values[slot++] = ndcg_at_k(ranked, relevant, c);
        values[slot++] = recall_at_k(ranked, relevant, c);
        values[slot++] = accuracy_at_k(ranked, relevant, c);
      }
    });

    auto& task_means = report.per_task[es.task];
    for (std::size_t qi = 0; qi < es.queries.size(); ++qi) {
      std::size_t slot = qi * per_query_slots;
      for (std::uint32_t c : cutoffs) {
        for (const char* metric : kMetrics) {
          const double v = values[slot++];
          report.per_query.push_back(PerQueryMetric{es.task, es.queries[qi].qid, metric, c, v});
          task_means[std::string(metric) + "@" + std::to_string(c)] += v;
        }
      }
    }
    for (auto& [key, sum] : task_means) sum /= static_cast<double>(es.queries.size());
  }

  for (const auto& [task, means] : report.per_task)
    for (const auto& [key, v] : means) report.macro[key] += v;
  for (auto& [key, v] : report.macro) v /= static_cast<double>(report.per_task.size());

  std::sort(report.per_query.begin(), report.per_query.end(),
            [](const PerQueryMetric& a, const PerQueryMetric& b) {
              return std::tie(a.task, a.qid, a.metric, a.cutoff) <
                     std::tie(b.task, b.qid, b.metric, b.cutoff);
            });
  return report;
}

// ---------------------------------------------------------------------------
// paired significance

// Continued fraction for the regularized incomplete beta (Lentz).
static double incbeta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kTiny = 1e-300;

  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw OutOfRange("beta parameters must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * incbeta_cf(a, b, x) / a;
  return 1.0 - front * incbeta_cf(b, a, 1.0 - x) / b;
}

double paired_significance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw LengthMismatch("paired samples differ in length");
  if (a.size() < 2) throw LengthMismatch("need at least two paired samples");
  const double n = static_cast<double>(a.size());

  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = (a[i] - b[i]) - mean;
    ss += d * d;
  }
  const double var = ss / (n - 1.0);
  if (var == 0.0) return mean == 0.0 ? 1.0 : 0.0;

  const double t = mean / std::sqrt(var / n);
  const double df = n - 1.0;
  // two-sided p from the t distribution via the incomplete beta identity
  return incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

// ---------------------------------------------------------------------------
// report files

void save_report(const std::filesystem::path& json_path, const std::filesystem::path& csv_path,
                 const EvalReport& report) {
  JsonValue doc = JsonValue::object();
  doc.set("checkpoint", report.checkpoint_id);
  JsonValue cutoffs = JsonValue::array();
  for (std::uint32_t c : report.cutoffs) cutoffs.push_back(static_cast<std::int64_t>(c));
  doc.set("cutoffs", std::move(cutoffs));
  doc.set("significance_test", "two-sided paired t-test");
  JsonValue macro = JsonValue::object();
  for (const auto& [key, v] : report.macro) macro.set(key, v);
  doc.set("macro", std::move(macro));
  JsonValue per_task = JsonValue::object();
  for (const auto& [task, means] : report.per_task) {
    JsonValue m = JsonValue::object();
    for (const auto& [key, v] : means) m.set(key, v);
    per_task.set(task, std::move(m));
  }
  doc.set("per_task", std::move(per_task));
  {
    std::ofstream f(json_path, std::ios::binary);
    if (!f) throw IoError("cannot write " + json_path.string());
    f << doc.dump(2);
  }
  {
    std::ofstream f(csv_path, std::ios::binary);
    if (!f) throw IoError("cannot write " + csv_path.string());
    f << "qid,task,metric,cutoff,value\n";
    for (const auto& m : report.per_query)
      f << m.qid << ',' << m.task << ',' << m.metric << ',' << m.cutoff << ','
        << format_double17(m.value) << '\n';
  }
}

}  // namespace tdro
