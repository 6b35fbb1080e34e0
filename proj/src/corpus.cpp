#include "tdro/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "tdro/json_writer.hpp"
#include "tdro/rng.hpp"

namespace tdro {

using nlohmann::json;

// ---------------------------------------------------------------------------
// spec validation

void SyntheticSpec::validate() const {
  if (n_tasks < 2) throw InvalidSpec("n_tasks must be >= 2");
  if (per_task_size < 8) throw InvalidSpec("per_task_size must be >= 8");
  if (negative_hardness.size() != n_tasks)
    throw InvalidSpec("negative_hardness must have one value per task");
  if (duplication.size() != n_tasks)
    throw InvalidSpec("duplication must have one value per task");
  for (double h : negative_hardness)
    if (!(h >= 0.0 && h <= 1.0)) throw InvalidSpec("negative_hardness outside [0,1]");
  for (double d : duplication)
    if (!(d >= 0.0 && d <= 1.0)) throw InvalidSpec("duplication outside [0,1]");
  if (vocab_size < 8 * n_tasks) throw InvalidSpec("vocab_size must be >= 8 * n_tasks");
  if (query_len < 1) throw InvalidSpec("query_len must be >= 1");
  if (doc_len < 2) throw InvalidSpec("doc_len must be >= 2");
  if (negatives_per_triple < 1) throw InvalidSpec("negatives_per_triple must be >= 1");
  bool any_dup = false, any_donor = false;
  for (double d : duplication) (d > 0.0 ? any_dup : any_donor) = true;
  if (any_dup && !any_donor)
    throw InvalidSpec("duplication requires at least one zero-duplication donor task");
}

std::uint32_t SyntheticSpec::effective_eval_per_task() const {
  if (eval_per_task > 0) return eval_per_task;
  return std::max<std::uint32_t>(4, per_task_size / 8);
}

void EvalSet::validate() const {
  std::unordered_set<std::string> dids;
  for (const auto& d : documents)
    if (!dids.insert(d.did).second) throw MalformedRecord(0, "duplicate doc id " + d.did);
  std::unordered_set<std::string> qids;
  for (const auto& q : queries)
    if (!qids.insert(q.qid).second) throw MalformedRecord(0, "duplicate query id " + q.qid);
  for (const auto& q : queries) {
    auto it = qrels.find(q.qid);
    if (it == qrels.end() || it->second.empty()) throw NoRelevant(q.qid);
    for (const auto& did : it->second)
      if (!dids.count(did))
        throw MalformedRecord(0, "qrel references unknown doc id " + did);
  }
}

// ---------------------------------------------------------------------------
// triple JSONL

namespace {

json parse_line(const std::string& line, std::size_t line_no) {
  json rec = json::parse(line, nullptr, false);
  if (rec.is_discarded() || !rec.is_object())
    throw MalformedRecord(line_no, "not a JSON object");
  return rec;
}

const json& require_field(const json& rec, const char* name, std::size_t line_no) {
  auto it = rec.find(name);
  if (it == rec.end()) throw MissingField(line_no, name);
  return *it;
}

std::string require_string(const json& rec, const char* name, std::size_t line_no) {
  const json& v = require_field(rec, name, line_no);
  if (!v.is_string()) throw MalformedRecord(line_no, std::string(name) + " must be a string");
  return v.get<std::string>();
}

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

std::vector<TaskDataset> load_triples(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());

  std::vector<TaskDataset> out;
  std::unordered_map<std::string, std::size_t> index;
  std::string line;
  std::size_t line_no = 0, records = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (blank(line)) continue;
    json rec = parse_line(line, line_no);

    TrainingTriple t;
    t.task = require_string(rec, "task", line_no);
    t.query = require_string(rec, "query", line_no);
    t.positive = require_string(rec, "pos", line_no);
    const json& negs = require_field(rec, "negs", line_no);
    if (!negs.is_array() || negs.empty())
      throw MalformedRecord(line_no, "negs must be a non-empty array");
    for (const auto& n : negs) {
      if (!n.is_string()) throw MalformedRecord(line_no, "negs entries must be strings");
      t.hard_negatives.push_back(n.get<std::string>());
    }
    if (t.task.empty()) throw MalformedRecord(line_no, "task label is empty");
    for (const auto& n : t.hard_negatives)
      if (n == t.positive)
        throw MalformedRecord(line_no, "positive identical to a hard negative");

    auto [it, inserted] = index.try_emplace(t.task, out.size());
    if (inserted) out.push_back(TaskDataset{t.task, {}});
    out[it->second].triples.push_back(std::move(t));
    ++records;
  }
  if (records == 0) throw EmptyFile(path.string());
  return out;
}

void save_triples(const std::filesystem::path& path, const std::vector<TaskDataset>& data) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  for (const auto& ds : data) {
    for (const auto& t : ds.triples) {
      JsonValue rec = JsonValue::object();
      rec.set("task", t.task);
      rec.set("query", t.query);
      rec.set("pos", t.positive);
      JsonValue negs = JsonValue::array();
      for (const auto& n : t.hard_negatives) negs.push_back(n);
      rec.set("negs", std::move(negs));
      f << rec.dump() << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// eval JSONL

std::vector<EvalSet> load_evalsets(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());

  std::vector<EvalSet> sets;
  std::unordered_map<std::string, std::size_t> task_index;
  std::unordered_map<std::string, std::string> qid_task;
  struct PendingQrel {
    std::size_t line_no;
    std::string qid;
    std::vector<std::string> rel;
  };
  std::vector<PendingQrel> pending;

  auto set_for = [&](const std::string& task) -> EvalSet& {
    auto [it, inserted] = task_index.try_emplace(task, sets.size());
    if (inserted) sets.push_back(EvalSet{task, {}, {}, {}});
    return sets[it->second];
  };

  std::string line;
  std::size_t line_no = 0, records = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (blank(line)) continue;
    json rec = parse_line(line, line_no);
    const std::string kind = require_string(rec, "kind", line_no);
    if (kind == "query") {
      const std::string task = require_string(rec, "task", line_no);
      EvalQuery q{require_string(rec, "qid", line_no), require_string(rec, "query", line_no)};
      qid_task[q.qid] = task;
      set_for(task).queries.push_back(std::move(q));
    } else if (kind == "doc") {
      const std::string task = require_string(rec, "task", line_no);
      EvalDoc d{require_string(rec, "did", line_no), require_string(rec, "doc", line_no)};
      set_for(task).documents.push_back(std::move(d));
    } else if (kind == "qrel") {
      PendingQrel pq;
      pq.line_no = line_no;
      pq.qid = require_string(rec, "qid", line_no);
      const json& rel = require_field(rec, "rel", line_no);
      if (!rel.is_array() || rel.empty())
        throw MalformedRecord(line_no, "rel must be a non-empty array");
      for (const auto& r : rel) {
        if (!r.is_string()) throw MalformedRecord(line_no, "rel entries must be strings");
        pq.rel.push_back(r.get<std::string>());
      }
      pending.push_back(std::move(pq));
    } else {
      throw MalformedRecord(line_no, "unknown kind \"" + kind + "\"");
    }
    ++records;
  }
  if (records == 0) throw EmptyFile(path.string());

  for (auto& pq : pending) {
    auto it = qid_task.find(pq.qid);
    if (it == qid_task.end())
      throw MalformedRecord(pq.line_no, "qrel references unknown qid " + pq.qid);
    auto& rels = sets[task_index[it->second]].qrels[pq.qid];
    rels.insert(pq.rel.begin(), pq.rel.end());
  }
  for (const auto& s : sets) s.validate();
  return sets;
}

void save_evalsets(const std::filesystem::path& path, const std::vector<EvalSet>& sets) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  for (const auto& s : sets) {
    for (const auto& q : s.queries) {
      JsonValue rec = JsonValue::object();
      rec.set("kind", "query");
      rec.set("task", s.task);
      rec.set("qid", q.qid);
      rec.set("query", q.text);
      f << rec.dump() << '\n';
    }
    for (const auto& d : s.documents) {
      JsonValue rec = JsonValue::object();
      rec.set("kind", "doc");
      rec.set("task", s.task);
      rec.set("did", d.did);
      rec.set("doc", d.text);
      f << rec.dump() << '\n';
    }
    for (const auto& [qid, rels] : s.qrels) {
      JsonValue rec = JsonValue::object();
      rec.set("kind", "qrel");
      rec.set("qid", qid);
      JsonValue rel = JsonValue::array();
      for (const auto& did : rels) rel.push_back(did);
      rec.set("rel", std::move(rel));
      f << rec.dump() << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// spec JSON

namespace {

std::vector<double> per_task_values(const json& v, std::uint32_t k, const char* name) {
  std::vector<double> out;
  if (v.is_number()) {
    out.assign(k, v.get<double>());
  } else if (v.is_array()) {
    for (const auto& x : v) {
      if (!x.is_number()) throw InvalidSpec(std::string(name) + " entries must be numbers");
      out.push_back(x.get<double>());
    }
  } else {
    throw InvalidSpec(std::string(name) + " must be a number or array");
  }
  return out;
}

}  // namespace

SyntheticSpec load_synthetic_spec(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw InvalidSpec("spec is not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_object()) throw InvalidSpec("spec must be a JSON object");

  static const std::set<std::string> known = {
      "n_tasks",     "per_task_size",        "vocab_size",    "query_len",
      "doc_len",     "negative_hardness",    "duplication",   "negatives_per_triple",
      "eval_per_task", "seed"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw InvalidSpec("unknown spec key \"" + key + "\"");

  SyntheticSpec s;
  if (j.contains("n_tasks")) s.n_tasks = j["n_tasks"].get<std::uint32_t>();
  if (j.contains("per_task_size")) s.per_task_size = j["per_task_size"].get<std::uint32_t>();
  if (j.contains("vocab_size")) s.vocab_size = j["vocab_size"].get<std::uint32_t>();
  if (j.contains("query_len")) s.query_len = j["query_len"].get<std::uint32_t>();
  if (j.contains("doc_len")) s.doc_len = j["doc_len"].get<std::uint32_t>();
  if (j.contains("negatives_per_triple"))
    s.negatives_per_triple = j["negatives_per_triple"].get<std::uint32_t>();
  if (j.contains("eval_per_task")) s.eval_per_task = j["eval_per_task"].get<std::uint32_t>();
  if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
  s.negative_hardness = j.contains("negative_hardness")
                            ? per_task_values(j["negative_hardness"], s.n_tasks,
                                              "negative_hardness")
                            : std::vector<double>(s.n_tasks, 0.3);
  s.duplication = j.contains("duplication")
                      ? per_task_values(j["duplication"], s.n_tasks, "duplication")
                      : std::vector<double>(s.n_tasks, 0.0);
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// synthetic generation

namespace {

// Fraction of hard negatives that are actually near-paraphrases of the
// positive (false negatives left behind by imperfect mining).
constexpr double kFalseNegativeRate = 0.08;

// Bijective base-26 pseudo-word for a global token index: 0 -> "a",
// 25 -> "z", 26 -> "aa", ...
std::string word_for(std::uint64_t index) {
  std::string w;
  std::uint64_t n = index + 1;
  while (n > 0) {
    --n;
    w.push_back(static_cast<char>('a' + (n % 26)));
    n /= 26;
  }
  std::reverse(w.begin(), w.end());
  return w;
}

struct TaskSlice {
  std::uint64_t start;
  std::uint64_t len;
};

TaskSlice slice_for(const SyntheticSpec& spec, std::uint32_t task) {
  const std::uint64_t len = spec.vocab_size / spec.n_tasks;
  return {static_cast<std::uint64_t>(task) * len, len};
}

std::string draw_word(Rng& rng, const TaskSlice& slice) {
  return word_for(slice.start + rng.uniform_int(slice.len));
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

struct RawTriple {
  std::vector<std::string> query, positive;
  std::vector<std::vector<std::string>> negatives;
};

std::vector<std::string> dropout_tokens(const std::vector<std::string>& tokens, Rng& rng,
                                        double keep_prob) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens)
    if (rng.uniform01() < keep_prob) out.push_back(t);
  if (out.empty()) out.push_back(tokens.front());
  return out;
}

// Pure function of (spec.seed, task, index): random access into any task's
// native stream, which is what makes near-duplicate tasks reproducible
// without cross-task sequencing.
RawTriple native_triple(const SyntheticSpec& spec, std::uint32_t task, std::uint64_t index,
                        std::uint64_t stream_tag) {
  const TaskSlice slice = slice_for(spec, task);
  Rng rng(derive_seed(spec.seed, "triple",
                      (static_cast<std::uint64_t>(task) << 40) ^ index ^ stream_tag));
  RawTriple t;
  t.query.reserve(spec.query_len);
  for (std::uint32_t i = 0; i < spec.query_len; ++i) t.query.push_back(draw_word(rng, slice));

  // The positive copies a chunk of the query. The copied fraction shrinks
  // with hardness, so low-hardness tasks are paraphrase-like (solvable by
  // any encoder almost immediately) while high-hardness tasks carry a weak
  // signal, mirroring the loss-scale spread of real mixed collections.
  const double hardness = spec.negative_hardness[task];
  const std::uint32_t copied = std::min(
      spec.doc_len / 2,
      std::max<std::uint32_t>(
          1, static_cast<std::uint32_t>(std::llround((1.0 - hardness) * spec.query_len))));
  t.positive.reserve(spec.doc_len);
  for (std::uint32_t i = 0; i < copied; ++i) t.positive.push_back(t.query[i]);
  for (std::uint32_t i = copied; i < spec.doc_len; ++i)
    t.positive.push_back(draw_word(rng, slice));
  const std::uint32_t n_copy = std::min<std::uint32_t>(
      static_cast<std::uint32_t>(std::llround(hardness * spec.doc_len)), spec.doc_len - 1);
  t.negatives.resize(spec.negatives_per_triple);
  std::vector<std::uint32_t> pos_index(spec.doc_len);
  for (auto& neg : t.negatives) {
    if (rng.uniform01() < kFalseNegativeRate) {
      // Unjudged near-paraphrase of the positive. Mined negatives carry a
      // few of these in practice; they floor every model's loss at a small
      // nonzero value no amount of training removes.
      neg = dropout_tokens(t.positive, rng, 0.9);
      while (join(neg) == join(t.positive)) neg.push_back(draw_word(rng, slice));
      continue;
    }
    // Copy a random subset of positive tokens; the rest are fresh draws.
    std::iota(pos_index.begin(), pos_index.end(), 0u);
    for (std::uint32_t i = 0; i < n_copy; ++i) {
      const std::uint64_t j = i + rng.uniform_int(spec.doc_len - i);
      std::swap(pos_index[i], pos_index[j]);
    }
    neg.reserve(spec.doc_len);
    for (std::uint32_t i = 0; i < n_copy; ++i) neg.push_back(t.positive[pos_index[i]]);
    for (std::uint32_t i = n_copy; i < spec.doc_len; ++i) neg.push_back(draw_word(rng, slice));
    while (join(neg) == join(t.positive)) neg.push_back(draw_word(rng, slice));
  }
  return t;
}

// Donor for a near-duplicate task: the zero-duplication task whose hardness
// is closest (ties -> lower task index).
std::uint32_t donor_for(const SyntheticSpec& spec, std::uint32_t task) {
  std::uint32_t best = spec.n_tasks;
  double best_gap = 0.0;
  for (std::uint32_t s = 0; s < spec.n_tasks; ++s) {
    if (s == task || spec.duplication[s] > 0.0) continue;
    const double gap = std::abs(spec.negative_hardness[s] - spec.negative_hardness[task]);
    if (best == spec.n_tasks || gap < best_gap) {
      best = s;
      best_gap = gap;
    }
  }
  if (best == spec.n_tasks) throw InvalidSpec("no donor task available for duplication");
  return best;
}

RawTriple duplicate_triple(const SyntheticSpec& spec, std::uint32_t task, std::uint64_t index,
                           std::uint64_t stream_tag) {
  const std::uint32_t donor = donor_for(spec, task);
  Rng rng(derive_seed(spec.seed, "dup",
                      (static_cast<std::uint64_t>(task) << 40) ^ index ^ stream_tag));
  const std::uint64_t src = rng.uniform_int(spec.per_task_size);
  RawTriple base = native_triple(spec, donor, src, 0);
  RawTriple t;
  t.query = dropout_tokens(base.query, rng, 0.9);
  t.positive = dropout_tokens(base.positive, rng, 0.9);

  // Negatives are rebuilt against the perturbed positive with the donor's
  // hardness and false-negative rate. Dropping out the source negatives
  // instead would dilute them twice and make duplicate tasks systematically
  // easier than their donor.
  const TaskSlice donor_slice = slice_for(spec, donor);
  const double hardness = spec.negative_hardness[donor];
  const std::uint32_t len = static_cast<std::uint32_t>(t.positive.size());
  const std::uint32_t n_copy = std::min<std::uint32_t>(
      static_cast<std::uint32_t>(std::llround(hardness * len)), len - 1 > 0 ? len - 1 : 0);
  t.negatives.resize(spec.negatives_per_triple);
  std::vector<std::uint32_t> pos_index(len);
  for (auto& neg : t.negatives) {
    if (rng.uniform01() < kFalseNegativeRate) {
      neg = dropout_tokens(t.positive, rng, 0.9);
      while (join(neg) == join(t.positive)) neg.push_back(draw_word(rng, donor_slice));
      continue;
    }
    std::iota(pos_index.begin(), pos_index.end(), 0u);
    for (std::uint32_t i = 0; i < n_copy; ++i) {
      const std::uint64_t j = i + rng.uniform_int(len - i);
      std::swap(pos_index[i], pos_index[j]);
    }
    neg.clear();
    neg.reserve(spec.doc_len);
    for (std::uint32_t i = 0; i < n_copy; ++i) neg.push_back(t.positive[pos_index[i]]);
    for (std::uint32_t i = n_copy; i < spec.doc_len; ++i)
      neg.push_back(draw_word(rng, donor_slice));
    while (join(neg) == join(t.positive)) neg.push_back(draw_word(rng, donor_slice));
  }
  return t;
}

std::string task_label(std::uint32_t g) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "task%03u", g);
  return buf;
}

TrainingTriple to_training(const RawTriple& raw, const std::string& task) {
  TrainingTriple t;
  t.task = task;
  t.query = join(raw.query);
  t.positive = join(raw.positive);
  for (const auto& n : raw.negatives) t.hard_negatives.push_back(join(n));
  return t;
}

EvalSet build_evalset(const std::string& task, const std::vector<TrainingTriple>& eval_triples,
                      const char* qid_infix) {
  EvalSet es;
  es.task = task;
  std::size_t did_counter = 0;
  for (std::size_t i = 0; i < eval_triples.size(); ++i) {
    const auto& t = eval_triples[i];
    char qid[64];
    std::snprintf(qid, sizeof(qid), "%s:%s%05zu", task.c_str(), qid_infix, i);
    es.queries.push_back({qid, t.query});
    char did[64];
    std::snprintf(did, sizeof(did), "%s:d%05zu", task.c_str(), did_counter++);
    es.documents.push_back({did, t.positive});
    es.qrels[qid].insert(did);
    for (const auto& neg : t.hard_negatives) {
      std::snprintf(did, sizeof(did), "%s:d%05zu", task.c_str(), did_counter++);
      es.documents.push_back({did, neg});
    }
  }
  return es;
}

}  // namespace

std::pair<std::vector<TaskDataset>, std::vector<EvalSet>> generate_synthetic(
    const SyntheticSpec& spec) {
  spec.validate();
  std::vector<TaskDataset> datasets;
  std::vector<EvalSet> evalsets;
  const std::uint32_t eval_n = spec.effective_eval_per_task();

  for (std::uint32_t g = 0; g < spec.n_tasks; ++g) {
    const std::string label = task_label(g);
    TaskDataset ds{label, {}};
    ds.triples.reserve(spec.per_task_size);

    const std::uint64_t n_dup = static_cast<std::uint64_t>(
        std::llround(spec.duplication[g] * spec.per_task_size));
    std::unordered_set<std::string> train_queries;
    for (std::uint64_t i = 0; i < spec.per_task_size; ++i) {
      RawTriple raw = i < n_dup ? duplicate_triple(spec, g, i, 0)
                                : native_triple(spec, g, i, 0);
      ds.triples.push_back(to_training(raw, label));
      train_queries.insert(ds.triples.back().query);
    }

    // Eval triples mirror the task's training mix and must not reuse any
    // training query text.
    const std::uint64_t n_dup_eval =
        static_cast<std::uint64_t>(std::llround(spec.duplication[g] * eval_n));
    std::vector<TrainingTriple> eval_triples;
    for (std::uint64_t i = 0; i < eval_n; ++i) {
      TrainingTriple t;
      bool ok = false;
      for (std::uint64_t retry = 0; retry < 64 && !ok; ++retry) {
        const std::uint64_t tag = 0x4556414CULL ^ (retry << 48);  // "EVAL" stream
        RawTriple raw = i < n_dup_eval
                            ? duplicate_triple(spec, g, spec.per_task_size + i, tag)
                            : native_triple(spec, g, spec.per_task_size + i, tag);
        t = to_training(raw, label);
        ok = !train_queries.count(t.query);
      }
      if (!ok) throw InvalidSpec("could not build an eval split disjoint from training");
      eval_triples.push_back(std::move(t));
    }
    evalsets.push_back(build_evalset(label, eval_triples, "q"));
    datasets.push_back(std::move(ds));
  }
  return {std::move(datasets), std::move(evalsets)};
}

std::pair<TaskDataset, EvalSet> holdout_split(const TaskDataset& ds, double fraction,
                                              std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw InvalidSpec("holdout fraction must be in (0,1)");
  const std::size_t size = ds.size();
  const std::size_t train_n = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(static_cast<double>(size) * (1.0 - fraction))));
  if (train_n >= size)
    throw TooSmall("holdout of " + std::to_string(size) + " triples at fraction " +
                   std::to_string(fraction) + " leaves no eval items");

  std::vector<std::size_t> order(size);
  std::iota(order.begin(), order.end(), 0u);
  Rng rng(derive_seed(seed, "holdout"));
  for (std::size_t i = size; i > 1; --i)
    std::swap(order[i - 1], order[rng.uniform_int(i)]);

  std::vector<std::size_t> train_idx(order.begin(), order.begin() + train_n);
  std::vector<std::size_t> eval_idx(order.begin() + train_n, order.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(eval_idx.begin(), eval_idx.end());

  TaskDataset train{ds.task, {}};
  for (std::size_t i : train_idx) train.triples.push_back(ds.triples[i]);
  std::vector<TrainingTriple> eval_triples;
  for (std::size_t i : eval_idx) eval_triples.push_back(ds.triples[i]);
  return {std::move(train), build_evalset(ds.task, eval_triples, "h")};
}

}  // namespace tdro
