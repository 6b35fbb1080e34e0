#include "tdro/cli.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "tdro/corpus.hpp"
#include "tdro/dro.hpp"
#include "tdro/evalkit.hpp"
#include "tdro/json_writer.hpp"
#include "tdro/sampler.hpp"
#include "tdro/svgplot.hpp"
#include "tdro/trainer.hpp"
#include "tdro/version.hpp"

namespace tdro {

namespace {

namespace fs = std::filesystem;

std::uint64_t digest_bytes(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t digest_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return digest_bytes(ss.str());
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct ManifestInfo {
  std::string command;
  std::uint64_t config_digest = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
};

void write_manifest(const fs::path& path, const ManifestInfo& info, double seconds) {
  JsonValue doc = JsonValue::object();
  doc.set("command", info.command);
  doc.set("config_digest", hex64(info.config_digest));
  doc.set("seed", static_cast<std::int64_t>(info.seed));
  JsonValue in = JsonValue::array();
  for (const auto& p : info.inputs) in.push_back(p);
  doc.set("inputs", std::move(in));
  JsonValue out = JsonValue::array();
  for (const auto& p : info.outputs) out.push_back(p);
  doc.set("outputs", std::move(out));
  doc.set("tool_version", kVersion);
  doc.set("duration_seconds", seconds);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << doc.dump(2);
}

fs::path manifest_path_for_dir(const fs::path& dir) { return dir / "run_manifest.json"; }
fs::path manifest_path_for_file(const fs::path& file) {
  return fs::path(file.string() + ".manifest.json");
}

fs::path csv_sidecar(const fs::path& out) {
  if (out.extension() == ".json") {
    fs::path p = out;
    p.replace_extension(".csv");
    return p;
  }
  return fs::path(out.string() + ".csv");
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

MetricsSink jsonl_metrics_sink(std::ofstream& f) {
  return [&f](const StepMetrics& m) {
    JsonValue rec = JsonValue::object();
    rec.set("step", static_cast<std::int64_t>(m.step));
    rec.set("lr", m.lr);
    JsonValue losses = JsonValue::object();
    for (const auto& [task, loss] : m.task_losses) losses.set(task, loss);
    rec.set("losses", std::move(losses));
    f << rec.dump() << '\n';
  };
}

void save_task_losses(const fs::path& path, const std::map<std::string, double>& losses) {
  JsonValue doc = JsonValue::object();
  for (const auto& [task, loss] : losses) doc.set(task, loss);
  auto f = open_out(path);
  f << doc.dump(2);
}

std::vector<std::uint32_t> parse_cutoffs(const std::string& arg) {
  std::vector<std::uint32_t> out;
  std::stringstream ss(arg);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      const long v = std::stol(item);
      if (v < 1) throw std::out_of_range("cutoff");
      out.push_back(static_cast<std::uint32_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("bad cutoff \"" + item + "\"");
    }
  }
  if (out.empty()) throw ConfigError("no cutoffs given");
  return out;
}

// ---------------------------------------------------------------------------
// commands

int cmd_gen(const fs::path& spec_path, const fs::path& out_dir, ManifestInfo& mi) {
  const SyntheticSpec spec = load_synthetic_spec(spec_path);
  auto [datasets, evalsets] = generate_synthetic(spec);
  fs::create_directories(out_dir);
  save_triples(out_dir / "triples.jsonl", datasets);
  save_evalsets(out_dir / "evalsets.jsonl", evalsets);
  mi.config_digest = digest_file(spec_path);
  mi.seed = spec.seed;
  mi.inputs = {spec_path.string()};
  mi.outputs = {(out_dir / "triples.jsonl").string(), (out_dir / "evalsets.jsonl").string()};
  std::size_t total = 0;
  for (const auto& d : datasets) total += d.size();
  std::cerr << "gen: " << datasets.size() << " tasks, " << total << " triples, "
            << evalsets.size() << " eval sets\n";
  return 0;
}

int cmd_train_ref(const fs::path& corpus_dir, const fs::path& config_path,
                  const fs::path& out_dir, ManifestInfo& mi) {
  const TrainConfig cfg = load_train_config(config_path);
  const auto corpus = load_triples(corpus_dir / "triples.jsonl");
  fs::create_directories(out_dir);
  auto metrics = open_out(out_dir / "metrics.jsonl");
  TrainResult result = train_reference(corpus, cfg, jsonl_metrics_sink(metrics));
  save_checkpoint(out_dir, result.params);
  save_task_losses(out_dir / "final_losses.json", result.final_task_losses);
  mi.config_digest = digest_bytes(train_config_canonical_json(cfg));
  mi.seed = cfg.seed;
  mi.inputs = {(corpus_dir / "triples.jsonl").string(), config_path.string()};
  mi.outputs = {(out_dir / "manifest.json").string(), (out_dir / "embedding.f64le").string(),
                (out_dir / "metrics.jsonl").string(), (out_dir / "final_losses.json").string()};
  return 0;
}

int cmd_tdro(const fs::path& corpus_dir, const fs::path& ref_dir, const fs::path& config_path,
             const std::string& measurement, const fs::path& out_dir, ManifestInfo& mi) {
  TrainConfig cfg = load_train_config(config_path);
  if (!measurement.empty()) cfg.measurement = measurement_kind_from_string(measurement);
  const auto corpus = load_triples(corpus_dir / "triples.jsonl");
  const EncoderParams reference = load_checkpoint(ref_dir);
  fs::create_directories(out_dir);
  auto metrics = open_out(out_dir / "metrics.jsonl");
  TdroResult result = run_tdro(corpus, reference, cfg, jsonl_metrics_sink(metrics));
  save_weights_json(out_dir / "weights.json", result.final_weights, cfg.steps);
  save_trajectory_csv(out_dir / "trajectory.csv", result.trajectory);
  save_losslog(out_dir / "losslog.jsonl", result.losslog);
  mi.config_digest = digest_bytes(train_config_canonical_json(cfg));
  mi.seed = cfg.seed;
  mi.inputs = {(corpus_dir / "triples.jsonl").string(), ref_dir.string(), config_path.string()};
  mi.outputs = {(out_dir / "weights.json").string(), (out_dir / "trajectory.csv").string(),
                (out_dir / "losslog.jsonl").string(), (out_dir / "metrics.jsonl").string()};
  std::cerr << "tdro: final weights";
  for (std::size_t g = 0; g < result.final_weights.tasks.size(); ++g)
    std::cerr << ' ' << result.final_weights.tasks[g] << '='
              << format_double17(result.final_weights.alpha[g]).substr(0, 8);
  std::cerr << '\n';
  return 0;
}

int cmd_transfer(const fs::path& weights_path, const std::string& strategy, double fraction,
                 const fs::path& out_path, ManifestInfo& mi) {
  const DomainWeights w = load_weights_json(weights_path);
  TransferArtifact artifact;
  if (strategy == "top") {
    artifact = transfer_top_fraction(w, fraction);
  } else if (strategy == "ratio") {
    artifact = transfer_ratio(w);
  } else if (strategy == "loss") {
    artifact = transfer_loss_scale(w);
  } else {
    throw ConfigError("unknown strategy \"" + strategy + "\"");
  }
  save_artifact(out_path, artifact);
  mi.config_digest = digest_file(weights_path);
  mi.inputs = {weights_path.string()};
  mi.outputs = {out_path.string()};
  return 0;
}

int cmd_finetune(const fs::path& corpus_dir, const fs::path& artifact_path,
                 const fs::path& config_path, const fs::path& out_dir, ManifestInfo& mi) {
  const TrainConfig cfg = load_train_config(config_path);
  const auto corpus = load_triples(corpus_dir / "triples.jsonl");
  const TransferArtifact artifact = load_artifact(artifact_path);
  fs::create_directories(out_dir);
  auto metrics = open_out(out_dir / "metrics.jsonl");
  TrainResult result = finetune(corpus, artifact, cfg, jsonl_metrics_sink(metrics));
  save_checkpoint(out_dir, result.params);
  save_task_losses(out_dir / "final_losses.json", result.final_task_losses);
  mi.config_digest = digest_bytes(train_config_canonical_json(cfg));
  mi.seed = cfg.seed;
  mi.inputs = {(corpus_dir / "triples.jsonl").string(), artifact_path.string(),
               config_path.string()};
  mi.outputs = {(out_dir / "manifest.json").string(), (out_dir / "embedding.f64le").string(),
                (out_dir / "metrics.jsonl").string(), (out_dir / "final_losses.json").string()};
  return 0;
}

int cmd_eval(const fs::path& checkpoint_dir, const fs::path& evalsets_arg,
             const std::string& cutoffs_arg, const fs::path& out_path, std::uint32_t threads,
             ManifestInfo& mi) {
  const EncoderParams params = load_checkpoint(checkpoint_dir);
  const fs::path eval_path =
      fs::is_directory(evalsets_arg) ? evalsets_arg / "evalsets.jsonl" : evalsets_arg;
  const auto sets = load_evalsets(eval_path);
  const auto cutoffs = parse_cutoffs(cutoffs_arg);
  EvalReport report = evaluate(params, sets, cutoffs, threads);
  const fs::path sidecar = csv_sidecar(out_path);
  save_report(out_path, sidecar, report);
  mi.config_digest = digest_file(checkpoint_dir / "manifest.json");
  mi.seed = params.seed;
  mi.inputs = {checkpoint_dir.string(), eval_path.string()};
  mi.outputs = {out_path.string(), sidecar.string()};
  for (const auto& [key, v] : report.macro)
    std::cerr << "eval: macro " << key << " = " << v << '\n';
  return 0;
}

int cmd_replay(const fs::path& losslog_path, const std::string& init_arg,
               const std::string& measurement, double eta_alpha, double floor,
               double smoothing, const fs::path& out_path, ManifestInfo& mi) {
  const auto log = load_losslog(losslog_path);
  DomainWeights init;
  if (init_arg == "uniform") {
    std::vector<std::string> tasks;
    const std::uint64_t first_step = log.front().step;
    for (const auto& e : log)
      if (e.step == first_step) tasks.push_back(e.task);
    init = DomainWeights::uniform(tasks, eta_alpha, floor);
  } else {
    init = load_weights_json(init_arg);
  }
  const auto traj = replay(log, init, measurement_kind_from_string(measurement), smoothing);
  save_trajectory_csv(out_path, traj);
  mi.config_digest = digest_file(losslog_path);
  mi.inputs = {losslog_path.string(),
               init_arg == "uniform" ? std::string("uniform") : init_arg};
  mi.outputs = {out_path.string()};
  return 0;
}

int cmd_plot(const fs::path& trajectory_path, const fs::path& out_path, ManifestInfo& mi) {
  write_trajectory_svg(trajectory_path, out_path);
  mi.config_digest = digest_file(trajectory_path);
  mi.inputs = {trajectory_path.string()};
  mi.outputs = {out_path.string()};
  return 0;
}

std::uint32_t default_threads() {
  if (const char* env = std::getenv("TDRO_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end && *end == '\0' && v >= 1) return static_cast<std::uint32_t>(v);
  }
  return 1;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"task-level robust data-mixture optimization for dense retrieval"};
  app.set_version_flag("--version", kVersion);
  std::uint32_t threads = default_threads();
  app.add_option("--threads", threads, "worker threads where supported")
      ->check(CLI::PositiveNumber);
  app.require_subcommand(1);

  std::string spec_file, config_file, corpus_dir, out_arg, ref_dir, weights_file;
  std::string strategy, artifact_file, checkpoint_dir, evalsets_arg, cutoffs = "10,100";
  std::string losslog_file, init_arg = "uniform", measurement, trajectory_file;
  double fraction = 0.7, eta_alpha = 2e-2, floor = 1e-8, smoothing = 0.0;

  auto* gen = app.add_subcommand("gen", "generate a synthetic multi-task corpus");
  gen->add_option("--spec", spec_file, "generator spec JSON")->required();
  gen->add_option("--out", out_arg, "output corpus directory")->required();

  auto* train_ref = app.add_subcommand("train-ref", "train the uniform reference model");
  train_ref->add_option("--corpus", corpus_dir)->required();
  train_ref->add_option("--config", config_file)->required();
  train_ref->add_option("--out", out_arg, "checkpoint directory")->required();

  auto* tdro_cmd = app.add_subcommand("tdro", "optimize domain weights with a proxy model");
  tdro_cmd->add_option("--corpus", corpus_dir)->required();
  tdro_cmd->add_option("--ref", ref_dir, "reference checkpoint directory")->required();
  tdro_cmd->add_option("--config", config_file)->required();
  tdro_cmd->add_option("--measurement", measurement, "relative|excess|raw (overrides config)")
      ->check(CLI::IsMember({"relative", "excess", "raw"}));
  tdro_cmd->add_option("--out", out_arg)->required();

  auto* transfer = app.add_subcommand("transfer", "turn learned weights into a fine-tune plan");
  transfer->add_option("--weights", weights_file)->required();
  transfer->add_option("--strategy", strategy)->required()
      ->check(CLI::IsMember({"top", "ratio", "loss"}));
  transfer->add_option("--fraction", fraction, "kept fraction for --strategy top");
  transfer->add_option("--out", out_arg)->required();

  auto* finetune_cmd = app.add_subcommand("finetune", "fine-tune with a transfer artifact");
  finetune_cmd->add_option("--corpus", corpus_dir)->required();
  finetune_cmd->add_option("--artifact", artifact_file)->required();
  finetune_cmd->add_option("--config", config_file)->required();
  finetune_cmd->add_option("--out", out_arg)->required();

  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on held-out splits");
  eval_cmd->add_option("--checkpoint", checkpoint_dir)->required();
  eval_cmd->add_option("--evalsets", evalsets_arg)->required();
  eval_cmd->add_option("--cutoffs", cutoffs, "comma-separated, default 10,100");
  eval_cmd->add_option("--out", out_arg, "report JSON path")->required();

  auto* replay_cmd = app.add_subcommand("replay", "re-run weight dynamics from a loss log");
  replay_cmd->add_option("--losslog", losslog_file)->required();
  replay_cmd->add_option("--init", init_arg, "\"uniform\" or a weights JSON path");
  replay_cmd->add_option("--measurement", measurement)->required()
      ->check(CLI::IsMember({"relative", "excess", "raw"}));
  replay_cmd->add_option("--eta-alpha", eta_alpha, "weights LR for uniform init");
  replay_cmd->add_option("--floor", floor, "weight floor for uniform init");
  replay_cmd->add_option("--smoothing", smoothing, "EMA factor on logged means");
  replay_cmd->add_option("--out", out_arg, "trajectory CSV path")->required();

  auto* plot = app.add_subcommand("plot", "render a trajectory CSV as SVG");
  plot->add_option("--trajectory", trajectory_file)->required();
  plot->add_option("--out", out_arg, "SVG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    std::cout << kVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  }

  const auto started = std::chrono::steady_clock::now();
  ManifestInfo mi;
  fs::path manifest_at;
  int rc = 1;
  try {
    if (gen->parsed()) {
      mi.command = "gen";
      manifest_at = manifest_path_for_dir(out_arg);
      rc = cmd_gen(spec_file, out_arg, mi);
    } else if (train_ref->parsed()) {
      mi.command = "train-ref";
      manifest_at = manifest_path_for_dir(out_arg);
      rc = cmd_train_ref(corpus_dir, config_file, out_arg, mi);
    } else if (tdro_cmd->parsed()) {
      mi.command = "tdro";
      manifest_at = manifest_path_for_dir(out_arg);
      rc = cmd_tdro(corpus_dir, ref_dir, config_file, measurement, out_arg, mi);
    } else if (transfer->parsed()) {
      mi.command = "transfer";
      manifest_at = manifest_path_for_file(out_arg);
      rc = cmd_transfer(weights_file, strategy, fraction, out_arg, mi);
    } else if (finetune_cmd->parsed()) {
      mi.command = "finetune";
      manifest_at = manifest_path_for_dir(out_arg);
      rc = cmd_finetune(corpus_dir, artifact_file, config_file, out_arg, mi);
    } else if (eval_cmd->parsed()) {
      mi.command = "eval";
      manifest_at = manifest_path_for_file(out_arg);
      rc = cmd_eval(checkpoint_dir, evalsets_arg, cutoffs, out_arg, threads, mi);
    } else if (replay_cmd->parsed()) {
      mi.command = "replay";
      manifest_at = manifest_path_for_file(out_arg);
      rc = cmd_replay(losslog_file, init_arg, measurement, eta_alpha, floor, smoothing,
                      out_arg, mi);
    } else if (plot->parsed()) {
      mi.command = "plot";
      manifest_at = manifest_path_for_file(out_arg);
      rc = cmd_plot(trajectory_file, out_arg, mi);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  if (rc == 0) {
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    try {
      write_manifest(manifest_at, mi, seconds);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 1;
    }
  }
  return rc;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> full;
  full.reserve(args.size() + 1);
  full.push_back("tdro");
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  argv.reserve(full.size());
  for (const auto& s : full) argv.push_back(s.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace tdro
