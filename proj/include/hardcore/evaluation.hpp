// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <limits>

#include "hardcore/dataset.hpp"
#include "hardcore/model.hpp"

namespace hardcore {

struct MetricsReport {
  std::string material_id;
  std::size_t n_eval = 0;
  double avg_rel_err = 0.0;
  double p95_rel_err = 0.0;
  double median_rel_err = 0.0;
  double min_rel_err = 0.0;
  double max_rel_err = 0.0;
  std::vector<double> rel_errors;  // |p_hat - p| / p
  std::vector<double> p_hat;
  std::vector<double> p;
  std::vector<std::string> record_ids;
  std::size_t parameter_count = 0;
  std::size_t model_file_size = 0;  // bytes, 0 if unknown
};

/// |p_hat - p| / p per record with their mean and linearly interpolated 95th percentile.
MetricsReport relative_error_stats(std::span<const double> p_hat, std::span<const double> p);

/// (p_hat - p) / p per record.
std::vector<double> signed_relative_errors(std::span<const double> p_hat, std::span<const double> p);

struct ParetoPoint {
  std::string label;
  std::size_t parameters = 0;
  double error = 0.0;
};

/// Indices of points not dominated by any other point (fewer-or-equal
/// parameters and lower-or-equal error, strictly better in one).
std::vector<std::size_t> pareto_frontier(std::span<const ParetoPoint> points);

struct SweepRow {
  std::string topology;
  std::size_t parameters = 0;
  std::uint64_t seed = 0;
  int fold = 0;
  double avg_rel_err = 0.0;
  double p95_rel_err = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  /// One point per topology; error is the mean p95 relative error over its runs.
  std::vector<ParetoPoint> points;
  std::vector<std::size_t> frontier;
};

struct TrainConfig;

/// Cross-validates every topology with `config` and the given seeds.
SweepResult pareto_sweep(const MaterialDataset& dataset, std::span<const HardcoreConfig> topologies,
                         const TrainConfig& config, std::span<const std::uint64_t> seeds,
                         std::uint64_t split_seed = 0, unsigned workers = 0);

/// Topologies swept by default: the 1755-parameter final model, a variant
/// without the second conv layer, narrower and wider layers and a kappa=17 model.
std::vector<HardcoreConfig> default_sweep_topologies();

/// One learning-curve entry. Validation fields are NaN on epochs without evaluation.
struct EpochLog {
  int epoch = 0;
  double loss_h = 0.0;
  double loss_p = 0.0;
  double alpha = 0.0;
  double lr = 0.0;
  double val_avg_rel_err = std::numeric_limits<double>::quiet_NaN();
  double val_p95_rel_err = std::numeric_limits<double>::quiet_NaN();
};

/// Writes `metrics.json`, `errors.csv` and, when a log is given,
/// `learning_curve.csv` into `directory`. Throws before writing anything if
/// the report holds no errors.
void emit_report(const MetricsReport& report, const std::filesystem::path& directory,
                 std::span<const EpochLog> learning_curve = {});

/// JSON summary of a report; per-record arrays are included.
std::string report_to_json_text(const MetricsReport& report);
MetricsReport report_from_json_text(const std::string& text);

/// CSV with columns topology,parameters,seed,fold,avg_rel_err,p95_rel_err.
void write_sweep_table(const SweepResult& sweep, const std::filesystem::path& path);

}  // namespace hardcore
