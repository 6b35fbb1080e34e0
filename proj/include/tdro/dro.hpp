#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tdro/errors.hpp"

namespace tdro {

// How per-group losses are turned into the update signal:
//   Relative: proxy mean / reference mean (the improving-headroom ratio)
//   Excess:   proxy mean - reference mean
//   Raw:      proxy mean, reference ignored
enum class MeasurementKind { Relative, Excess, Raw };

MeasurementKind measurement_kind_from_string(const std::string& s);
const char* to_string(MeasurementKind kind);

struct DomainWeights {
  std::vector<std::string> tasks;  // fixed order; alpha is aligned to it
  std::vector<double> alpha;       // simplex: sums to 1, every entry >= floor
  double eta_alpha = 2e-2;
  double floor = 1e-8;

  static DomainWeights uniform(std::vector<std::string> task_labels, double eta = 2e-2,
                               double floor_value = 1e-8);
  void validate() const;
  double weight_of(const std::string& task) const;
};

struct MeasurementRecord {
  std::uint64_t step = 0;
  MeasurementKind kind = MeasurementKind::Relative;
  std::vector<std::string> tasks;
  std::vector<double> proxy_mean;
  std::vector<double> ref_mean;
  std::vector<double> measurement;  // output of measure(), pre-normalization
};

// Reference means are clamped at 1e-4 before division so near-zero reference
// losses cannot blow up the ratio.
std::vector<double> measure(const std::map<std::string, double>& proxy_means,
                            const std::map<std::string, double>& ref_means,
                            std::span<const std::string> tasks, MeasurementKind kind);

// L2 normalization of the measurement vector (the "gradient normalization"
// step); scale-invariant for positive scalings.
std::vector<double> normalize_measurements(std::span<const double> m);

// Exponentiated ascent: alpha_g <- alpha_g * exp(eta * m_g), then floor and
// renormalize. The largest component of m is subtracted before
// exponentiating, which cannot change the result (shift invariance) but
// rules out overflow. Flooring re-scales only the free entries, so every
// weight stays >= floor and the sum stays 1.
DomainWeights update_weights(const DomainWeights& w, std::span<const double> m_normalized);

// One measurement-log line per (step, task).
struct LossLogEntry {
  std::uint64_t step = 0;
  std::string task;
  double proxy_loss = 0.0;  // batch mean for the task at this step
  double ref_loss = 0.0;
  std::uint64_t count = 0;  // items behind the mean
};

std::vector<LossLogEntry> load_losslog(const std::filesystem::path& path);
void save_losslog(const std::filesystem::path& path, std::span<const LossLogEntry> log);

struct WeightTrajectory {
  std::vector<std::uint64_t> steps;    // aligned: steps[0] = 0 for the init entry
  std::vector<DomainWeights> weights;  // weights[0] = init, then one per step
  std::vector<MeasurementRecord> records;  // one per step (weights.size() - 1)

  const DomainWeights& final_weights() const { return weights.back(); }
};

// Re-runs the weight dynamics from a measurement log. Steps must be
// contiguous and each step must cover every task of `init` exactly once.
// With the same inputs the trajectory is bit-identical to a live run.
// `smoothing` is an optional EMA factor on the logged means (0 = off), the
// same knob the live trainer exposes.
WeightTrajectory replay(std::span<const LossLogEntry> log, const DomainWeights& init,
                        MeasurementKind kind, double smoothing = 0.0);

// trajectory CSV: header "step,task,weight,measurement", floats at 17
// significant digits. Row order: step-major, task order of the weights.
void save_trajectory_csv(const std::filesystem::path& path, const WeightTrajectory& t);

void save_weights_json(const std::filesystem::path& path, const DomainWeights& w,
                       std::uint64_t step);
DomainWeights load_weights_json(const std::filesystem::path& path);

}  // namespace tdro
