// SPDX-License-Identifier: Apache-2.0
#include "hardcore/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

#include "hardcore/error.hpp"
#include "hardcore/magloss.hpp"
#include "hardcore/training.hpp"

namespace hardcore {

using json = nlohmann::json;

MetricsReport relative_error_stats(std::span<const double> p_hat, std::span<const double> p) {
  if (p_hat.size() != p.size()) throw std::invalid_argument("relative_error_stats: length mismatch");
  if (p.empty()) throw std::invalid_argument("relative_error_stats: empty error list");
  MetricsReport r;
  r.n_eval = p.size();
  r.p_hat.assign(p_hat.begin(), p_hat.end());
  r.p.assign(p.begin(), p.end());
  r.rel_errors.reserve(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] > 0.0)) throw std::invalid_argument("relative_error_stats: targets must be positive");
    r.rel_errors.push_back(std::abs(p_hat[i] - p[i]) / p[i]);
  }
  const auto& e = r.rel_errors;
  r.avg_rel_err = std::accumulate(e.begin(), e.end(), 0.0) / static_cast<double>(e.size());
  r.p95_rel_err = quantile(e, 0.95);
  r.median_rel_err = quantile(e, 0.5);
  r.min_rel_err = *std::min_element(e.begin(), e.end());
  r.max_rel_err = *std::max_element(e.begin(), e.end());
  return r;
}

std::vector<double> signed_relative_errors(std::span<const double> p_hat, std::span<const double> p) {
  if (p_hat.size() != p.size()) throw std::invalid_argument("signed_relative_errors: length mismatch");
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = (p_hat[i] - p[i]) / p[i];
  return out;
}

std::vector<std::size_t> pareto_frontier(std::span<const ParetoPoint> points) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < points.size() && !dominated; ++j) {
      if (i == j) continue;
      const auto& a = points[j];
      const auto& b = points[i];
      dominated = a.parameters <= b.parameters && a.error <= b.error &&
                  (a.parameters < b.parameters || a.error < b.error);
    }
    if (!dominated) out.push_back(i);
  }
  return out;
}

std::vector<HardcoreConfig> default_sweep_topologies() {
  std::vector<HardcoreConfig> out;
  for (const char* label : {"12-8-1/k9/d4/m11/p8-1", "12-1/k9/d4/m11/p8-1", "8-4-1/k9/d4/m7/p4-1",
                            "16-12-1/k9/d4/m15/p12-1", "24-16-1/k17/d4/m23/p16-1"})
    out.push_back(config_from_label(label));
  return out;
}

SweepResult pareto_sweep(const MaterialDataset& dataset, std::span<const HardcoreConfig> topologies,
                         const TrainConfig& config, std::span<const std::uint64_t> seeds, std::uint64_t split_seed,
                         unsigned workers) {
  if (topologies.empty()) throw std::invalid_argument("pareto_sweep: no topologies given");
  SweepResult result;
  for (const auto& topo : topologies) {
    TrainConfig c = config;
    c.model = topo;
    const CrossValidation cv = cross_validate(dataset, c, seeds, split_seed, workers);
    const std::size_t params = parameter_count(topo);
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& run : cv.runs) {
      if (!run.validation) continue;
      result.rows.push_back(
          {topo.label(), params, run.config.seed, run.fold, run.validation->avg_rel_err, run.validation->p95_rel_err});
      acc += run.validation->p95_rel_err;
      ++n;
    }
    result.points.push_back({topo.label(), params, n ? acc / static_cast<double>(n) : std::nan("")});
  }
  result.frontier = pareto_frontier(result.points);
  return result;
}

// ---------------------------------------------------------------------------
// reports

std::string report_to_json_text(const MetricsReport& r) {
  json j = {{"material_id", r.material_id},
            {"n_eval", r.n_eval},
            {"avg_rel_err", r.avg_rel_err},
            {"p95_rel_err", r.p95_rel_err},
            {"median_rel_err", r.median_rel_err},
            {"min_rel_err", r.min_rel_err},
            {"max_rel_err", r.max_rel_err},
            {"parameter_count", r.parameter_count},
            {"model_file_size", r.model_file_size},
            {"record_ids", r.record_ids},
            {"p", r.p},
            {"p_hat", r.p_hat},
            {"rel_errors", r.rel_errors}};
  return j.dump(2);
}

MetricsReport report_from_json_text(const std::string& text) {
  try {
    const json j = json::parse(text);
    MetricsReport r;
    r.material_id = j.at("material_id").get<std::string>();
    r.n_eval = j.at("n_eval").get<std::size_t>();
    r.avg_rel_err = j.at("avg_rel_err").get<double>();
    r.p95_rel_err = j.at("p95_rel_err").get<double>();
    r.median_rel_err = j.at("median_rel_err").get<double>();
    r.min_rel_err = j.at("min_rel_err").get<double>();
    r.max_rel_err = j.at("max_rel_err").get<double>();
    r.parameter_count = j.at("parameter_count").get<std::size_t>();
    r.model_file_size = j.at("model_file_size").get<std::size_t>();
    r.record_ids = j.at("record_ids").get<std::vector<std::string>>();
    r.p = j.at("p").get<std::vector<double>>();
    r.p_hat = j.at("p_hat").get<std::vector<double>>();
    r.rel_errors = j.at("rel_errors").get<std::vector<double>>();
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed metrics report: ") + e.what());
  }
}

void emit_report(const MetricsReport& report, const std::filesystem::path& directory,
                 std::span<const EpochLog> learning_curve) {
  if (report.rel_errors.empty()) throw std::invalid_argument("emit_report: report has no errors");
  std::filesystem::create_directories(directory);
  {
    std::ofstream out(directory / "metrics.json");
    if (!out) throw DataError("cannot write " + (directory / "metrics.json").string());
    out << report_to_json_text(report) << '\n';
  }
  {
    std::ofstream out(directory / "errors.csv");
    if (!out) throw DataError("cannot write " + (directory / "errors.csv").string());
    out.precision(17);
    out << "record_id,p,p_hat,rel_err\n";
    for (std::size_t i = 0; i < report.rel_errors.size(); ++i) {
      out << (i < report.record_ids.size() ? report.record_ids[i] : std::to_string(i)) << ','
          << (i < report.p.size() ? report.p[i] : std::nan("")) << ','
          << (i < report.p_hat.size() ? report.p_hat[i] : std::nan("")) << ',' << report.rel_errors[i] << '\n';
    }
  }
  if (!learning_curve.empty()) {
    std::ofstream out(directory / "learning_curve.csv");
    if (!out) throw DataError("cannot write " + (directory / "learning_curve.csv").string());
    out.precision(17);
    out << "epoch,loss_h,loss_p,alpha,lr,val_avg_rel_err,val_p95_rel_err\n";
    auto cell = [&](double v) {
      if (std::isfinite(v)) out << v;
    };
    for (const auto& e : learning_curve) {
      out << e.epoch << ',';
      cell(e.loss_h);
      out << ',';
      cell(e.loss_p);
      out << ',' << e.alpha << ',' << e.lr << ',';
      cell(e.val_avg_rel_err);
      out << ',';
      cell(e.val_p95_rel_err);
      out << '\n';
    }
  }
}

void write_sweep_table(const SweepResult& sweep, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "topology,parameters,seed,fold,avg_rel_err,p95_rel_err\n";
  for (const auto& r : sweep.rows)
    out << r.topology << ',' << r.parameters << ',' << r.seed << ',' << r.fold << ',' << r.avg_rel_err << ','
        << r.p95_rel_err << '\n';
}

}  // namespace hardcore
