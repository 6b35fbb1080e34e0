#include "tdro/dro.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tdro/json_writer.hpp"

namespace tdro {

using nlohmann::json;

MeasurementKind measurement_kind_from_string(const std::string& s) {
  if (s == "relative") return MeasurementKind::Relative;
  if (s == "excess") return MeasurementKind::Excess;
  if (s == "raw") return MeasurementKind::Raw;
  throw ConfigError("unknown measurement kind \"" + s + "\"");
}

const char* to_string(MeasurementKind kind) {
  switch (kind) {
    case MeasurementKind::Relative: return "relative";
    case MeasurementKind::Excess: return "excess";
    case MeasurementKind::Raw: return "raw";
  }
  return "?";
}

DomainWeights DomainWeights::uniform(std::vector<std::string> task_labels, double eta,
                                     double floor_value) {
  DomainWeights w;
  w.tasks = std::move(task_labels);
  w.alpha.assign(w.tasks.size(), 1.0 / static_cast<double>(w.tasks.size()));
  w.eta_alpha = eta;
  w.floor = floor_value;
  w.validate();
  return w;
}

void DomainWeights::validate() const {
  if (tasks.size() < 2) throw ConfigError("domain weights need k >= 2 tasks");
  if (tasks.size() != alpha.size()) throw LengthMismatch("tasks vs alpha");
  if (!(eta_alpha >= 0.0) || !std::isfinite(eta_alpha))
    throw ConfigError("eta_alpha must be finite and non-negative");
  if (!(floor > 0.0) || floor * static_cast<double>(tasks.size()) >= 1.0)
    throw ConfigError("floor must be positive and k*floor < 1");
  double sum = 0.0;
  for (double a : alpha) {
    if (!std::isfinite(a)) throw NonFinite("alpha");
    if (a < floor) throw ConfigError("alpha entry below floor");
    sum += a;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("alpha must sum to 1");
}

double DomainWeights::weight_of(const std::string& task) const {
  for (std::size_t i = 0; i < tasks.size(); ++i)
    if (tasks[i] == task) return alpha[i];
  throw MissingTask(task);
}

std::vector<double> measure(const std::map<std::string, double>& proxy_means,
                            const std::map<std::string, double>& ref_means,
                            std::span<const std::string> tasks, MeasurementKind kind) {
  constexpr double kRefClamp = 1e-4;
  std::vector<double> m;
  m.reserve(tasks.size());
  for (const auto& task : tasks) {
    auto pit = proxy_means.find(task);
    if (pit == proxy_means.end()) throw MissingTask(task);
    const double proxy = pit->second;
    if (!std::isfinite(proxy)) throw NonFinite("proxy mean for " + task);
    if (proxy < 0.0) throw NonFinite("negative proxy mean for " + task);

    double value = 0.0;
    if (kind == MeasurementKind::Raw) {
      value = proxy;
    } else {
      auto rit = ref_means.find(task);
      if (rit == ref_means.end()) throw MissingTask(task);
      const double ref = rit->second;
      if (!std::isfinite(ref)) throw NonFinite("reference mean for " + task);
      value = kind == MeasurementKind::Relative ? proxy / std::max(ref, kRefClamp)
                                                : proxy - ref;
    }
    m.push_back(value);
  }
  return m;
}

std::vector<double> normalize_measurements(std::span<const double> m) {
  double sq = 0.0;
  for (double v : m) {
    if (!std::isfinite(v)) throw NonFinite("measurement vector");
    sq += v * v;
  }
  if (sq <= 0.0) throw ZeroVector();
  const double inv = 1.0 / std::sqrt(sq);
  std::vector<double> out(m.begin(), m.end());
  for (double& v : out) v *= inv;
  return out;
}

DomainWeights update_weights(const DomainWeights& w, std::span<const double> m) {
  if (m.size() != w.alpha.size()) throw LengthMismatch("measurement vs alpha");
  for (double v : m)
    if (!std::isfinite(v)) throw NonFinite("measurement vector");

  DomainWeights out = w;
  double m_max = m[0];
  for (double v : m) m_max = std::max(m_max, v);
  double sum = 0.0;
  for (std::size_t g = 0; g < m.size(); ++g) {
    out.alpha[g] = w.alpha[g] * std::exp(w.eta_alpha * (m[g] - m_max));
    sum += out.alpha[g];
  }
  for (double& a : out.alpha) a /= sum;

  // Clamp to the floor, re-scaling only the unclamped mass; repeats because
  // the re-scale can push further entries under the floor.
  for (std::size_t round = 0; round < out.alpha.size(); ++round) {
    double clamped_mass = 0.0, free_mass = 0.0;
    bool any_below = false;
    for (double a : out.alpha) {
      if (a <= w.floor) {
        any_below = any_below || a < w.floor;
        clamped_mass += w.floor;
      } else {
        free_mass += a;
      }
    }
    if (!any_below) break;
    const double scale = (1.0 - clamped_mass) / free_mass;
    for (double& a : out.alpha) a = a <= w.floor ? w.floor : a * scale;
  }
  return out;
}

// ---------------------------------------------------------------------------
// measurement log

std::vector<LossLogEntry> load_losslog(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<LossLogEntry> log;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object())
      throw MalformedRecord(line_no, "not a JSON object");
    LossLogEntry e;
    try {
      e.step = rec.at("step").get<std::uint64_t>();
      e.task = rec.at("task").get<std::string>();
      e.proxy_loss = rec.at("proxy_loss").get<double>();
      e.ref_loss = rec.at("ref_loss").get<double>();
      e.count = rec.at("count").get<std::uint64_t>();
    } catch (const json::exception& ex) {
      throw MalformedRecord(line_no, ex.what());
    }
    log.push_back(std::move(e));
  }
  if (log.empty()) throw EmptyFile(path.string());
  return log;
}

void save_losslog(const std::filesystem::path& path, std::span<const LossLogEntry> log) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  for (const auto& e : log) {
    JsonValue rec = JsonValue::object();
    rec.set("step", static_cast<std::int64_t>(e.step));
    rec.set("task", e.task);
    rec.set("proxy_loss", e.proxy_loss);
    rec.set("ref_loss", e.ref_loss);
    rec.set("count", static_cast<std::int64_t>(e.count));
    f << rec.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// replay

WeightTrajectory replay(std::span<const LossLogEntry> log, const DomainWeights& init,
                        MeasurementKind kind, double smoothing) {
  init.validate();
  if (!(smoothing >= 0.0 && smoothing < 1.0))
    throw ConfigError("smoothing must be in [0,1)");

  WeightTrajectory traj;
  traj.steps.push_back(0);
  traj.weights.push_back(init);
  if (log.empty()) return traj;

  const std::size_t k = init.tasks.size();
  std::map<std::string, double> smoothed_proxy, smoothed_ref;

  std::size_t i = 0;
  std::uint64_t expected_step = log.front().step;
  DomainWeights current = init;
  while (i < log.size()) {
    const std::uint64_t step = log[i].step;
    if (step != expected_step) throw GapInLog(expected_step);

    std::map<std::string, double> proxy_means, ref_means;
    while (i < log.size() && log[i].step == step) {
      if (std::find(init.tasks.begin(), init.tasks.end(), log[i].task) == init.tasks.end())
        throw MissingTask(log[i].task);
      if (!proxy_means.emplace(log[i].task, log[i].proxy_loss).second)
        throw MalformedRecord(i + 1, "duplicate task \"" + log[i].task + "\" at step " +
                                         std::to_string(step));
      ref_means[log[i].task] = log[i].ref_loss;
      ++i;
    }
    if (proxy_means.size() != k) {
      for (const auto& task : init.tasks)
        if (!proxy_means.count(task)) throw MissingTask(task);
    }
    if (smoothing > 0.0) {
      for (const auto& task : init.tasks) {
        auto blend = [&](std::map<std::string, double>& prev,
                         std::map<std::string, double>& cur) {
          auto it = prev.find(task);
          cur[task] = it == prev.end()
                          ? cur[task]
                          : smoothing * it->second + (1.0 - smoothing) * cur[task];
          prev[task] = cur[task];
        };
        blend(smoothed_proxy, proxy_means);
        blend(smoothed_ref, ref_means);
      }
    }

    auto m = measure(proxy_means, ref_means, current.tasks, kind);
    auto mn = normalize_measurements(m);
    current = update_weights(current, mn);

    MeasurementRecord rec;
    rec.step = step;
    rec.kind = kind;
    rec.tasks = current.tasks;
    for (const auto& task : current.tasks) {
      rec.proxy_mean.push_back(proxy_means[task]);
      rec.ref_mean.push_back(ref_means[task]);
    }
    rec.measurement = std::move(m);
    traj.steps.push_back(step);
    traj.weights.push_back(current);
    traj.records.push_back(std::move(rec));
    ++expected_step;
  }
  return traj;
}

// ---------------------------------------------------------------------------
// serialization

void save_trajectory_csv(const std::filesystem::path& path, const WeightTrajectory& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << "step,task,weight,measurement\n";
  for (std::size_t s = 0; s + 1 < t.weights.size(); ++s) {
    const auto& w = t.weights[s + 1];
    for (std::size_t g = 0; g < w.tasks.size(); ++g) {
      f << t.steps[s + 1] << ',' << w.tasks[g] << ',' << format_double17(w.alpha[g]) << ','
        << format_double17(t.records[s].measurement[g]) << '\n';
    }
  }
}

void save_weights_json(const std::filesystem::path& path, const DomainWeights& w,
                       std::uint64_t step) {
  JsonValue doc = JsonValue::object();
  JsonValue tasks = JsonValue::array();
  JsonValue alpha = JsonValue::array();
  for (std::size_t g = 0; g < w.tasks.size(); ++g) {
    tasks.push_back(w.tasks[g]);
    alpha.push_back(w.alpha[g]);
  }
  doc.set("tasks", std::move(tasks));
  doc.set("alpha", std::move(alpha));
  doc.set("eta_alpha", w.eta_alpha);
  doc.set("floor", w.floor);
  doc.set("step", static_cast<std::int64_t>(step));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << doc.dump(2);
}

DomainWeights load_weights_json(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw IoError("bad weights file: " + std::string(e.what()));
  }
  DomainWeights w;
  w.tasks = j.at("tasks").get<std::vector<std::string>>();
  w.alpha = j.at("alpha").get<std::vector<double>>();
  if (j.contains("eta_alpha")) w.eta_alpha = j["eta_alpha"].get<double>();
  if (j.contains("floor")) w.floor = j["floor"].get<double>();
  w.validate();
  return w;
}

}  // namespace tdro
