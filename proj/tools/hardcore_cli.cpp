// SPDX-License-Identifier: Apache-2.0
// Command-line front end: hardcore <subcommand> [options]

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hardcore/dataset.hpp"
#include "hardcore/error.hpp"
#include "hardcore/evaluation.hpp"
#include "hardcore/features.hpp"
#include "hardcore/magloss.hpp"
#include "hardcore/model.hpp"
#include "hardcore/synthetic.hpp"
#include "hardcore/training.hpp"

namespace fs = std::filesystem;
using namespace hardcore;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string data_dir;
  std::string config;
  std::string out = "out";
  std::string seeds;
  int folds = 0;
  std::string material;
  std::string model;
  bool emit_h = false;
  std::vector<std::string> overrides;
  unsigned threads = 0;
  int verbose = 0;
  // synth
  std::size_t records = 1000;
  std::uint64_t synth_seed = 0;
  std::string shapes = "sine";
  double factor_amplitude = 0.05;
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw UsageError("--seeds: '" + item + "' is not a non-negative integer");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("--seeds: empty seed list");
  return out;
}

TrainConfig resolve_config(const Options& o) {
  TrainConfig c = o.config.empty() ? TrainConfig{} : load_train_config(o.config);
  for (const auto& a : o.overrides) apply_config_override(c, a);
  if (o.folds > 0) c.k_folds = o.folds;
  c.validate();
  return c;
}

std::vector<std::uint64_t> resolve_seeds(const Options& o, const TrainConfig& c) {
  return o.seeds.empty() ? std::vector<std::uint64_t>{c.seed} : parse_seeds(o.seeds);
}

MaterialDataset load(const Options& o) {
  if (o.data_dir.empty()) throw UsageError("--data-dir is required");
  std::optional<std::string> id;
  if (!o.material.empty()) id = o.material;
  return load_material(o.data_dir, id);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json nullable(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

// ---------------------------------------------------------------------------

int cmd_validate(const Options& o) {
  const auto ds = load(o);
  std::map<WaveformClass, std::size_t> classes;
  for (const auto& r : ds.records()) ++classes[classify_waveform(r.b)];
  std::cout << ds.size() << " records (material " << ds.material_id() << ")\n";
  std::cout << "b_lim " << ds.b_lim() << " T";
  if (ds.has_h()) std::cout << ", h_lim " << ds.h_lim() << " A/m";
  std::cout << '\n';
  std::size_t trainable = 0;
  for (const auto& r : ds.records()) trainable += r.trainable();
  std::cout << "trainable records " << trainable << '\n';
  std::cout << "waveform classes:";
  for (auto c : {WaveformClass::sine, WaveformClass::triangular, WaveformClass::trapezoidal, WaveformClass::other})
    std::cout << ' ' << to_string(c) << '=' << classes[c];
  std::cout << '\n';
  std::vector<std::string> anomalies;
  if (trainable > 0) {
    const auto stats = area_error_stats(ds, 40);
    for (const auto& id : stats.negative_area_records) anomalies.push_back("negative loop area: record " + id);
  }
  std::cout << "anomalies " << anomalies.size() << '\n';
  for (const auto& a : anomalies) std::cout << "  " << a << '\n';
  return kOk;
}

int cmd_bh_analyze(const Options& o) {
  const auto ds = load(o);
  std::size_t usable = 0;
  for (const auto& r : ds.records()) usable += r.trainable();
  if (usable == 0)
    throw DataError("bh-analyze: no record carries both H_waveform.csv and Volumetric_losses.csv data");
  const auto stats = area_error_stats(ds, 40);
  write_area_error_report(stats, o.out);
  std::cout << "analyzed " << stats.relative_errors.size() << " records, skipped " << stats.skipped << '\n';
  std::cout << "relative error min " << stats.min << " max " << stats.max << " mean " << stats.mean << '\n';
  std::cout << "wrote " << (fs::path(o.out) / "bh_area_error.csv").string() << '\n';
  return kOk;
}

int cmd_classify(const Options& o) {
  const auto ds = load(o);
  ClassifierThresholds th;
  if (!o.config.empty() || !o.overrides.empty()) th = resolve_config(o).classifier;
  fs::create_directories(o.out);
  const fs::path path = fs::path(o.out) / "waveform_classes.csv";
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "record_id,class\n";
  std::map<WaveformClass, std::size_t> counts;
  for (const auto& r : ds.records()) {
    const auto c = classify_waveform(r.b, th);
    ++counts[c];
    out << r.record_id << ',' << to_string(c) << '\n';
  }
  for (const auto& [c, n] : counts) std::cout << to_string(c) << ' ' << n << '\n';
  std::cout << "wrote " << path.string() << '\n';
  return kOk;
}

void print_progress(const Options& o, const EpochLog& e) {
  if (o.verbose > 0 && (e.epoch % 100 == 0 || std::isfinite(e.val_avg_rel_err)))
    std::cerr << "epoch " << e.epoch << " loss_h " << e.loss_h << " loss_p " << e.loss_p << " alpha " << e.alpha
              << '\n';
}

void write_predictions(const fs::path& path, const MaterialDataset& ds, std::span<const std::size_t> indices,
                       std::span<const double> p_hat) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "record_id,p_hat\n";
  for (std::size_t i = 0; i < indices.size(); ++i) out << ds[indices[i]].record_id << ',' << p_hat[i] << '\n';
}

int cmd_train(const Options& o) {
  const auto ds = load(o);
  TrainConfig c = resolve_config(o);
  c.seed = resolve_seeds(o, c).front();
  fs::create_directories(o.out);
  const TrainRun run = train(ds, nullptr, std::nullopt, c, [&](const EpochLog& e) { print_progress(o, e); });
  const fs::path model_path = fs::path(o.out) / (ds.material_id() + kModelFileExtension);
  save_model(*run.model, model_path);
  write_epoch_log(run.log, fs::path(o.out) / "train_log.jsonl");
  write_predictions(fs::path(o.out) / "training_p_hat.csv", ds, run.training_indices, run.training_p_hat);
  std::vector<double> p;
  for (auto i : run.training_indices) p.push_back(*ds[i].loss);
  const auto m = relative_error_stats(run.training_p_hat, p);
  std::cout << "trained " << run.model->parameter_total() << " parameters on " << run.training_indices.size()
            << " records, " << c.epochs << " epochs\n";
  std::cout << "training avg_rel_err " << m.avg_rel_err << " p95_rel_err " << m.p95_rel_err << '\n';
  std::cout << "wrote " << model_path.string() << '\n';
  return kOk;
}

int cmd_cv(const Options& o) {
  const auto ds = load(o);
  const TrainConfig c = resolve_config(o);
  const auto seeds = resolve_seeds(o, c);
  const fs::path out(o.out);
  fs::create_directories(out / "logs");
  const auto cv = cross_validate(ds, c, seeds, 0, o.threads);
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : cv.runs) {
    const std::string stem = "seed" + std::to_string(run.config.seed) + "_fold" + std::to_string(run.fold);
    write_epoch_log(run.log, out / "logs" / (stem + ".jsonl"));
    save_model(*run.model, out / "models" / (stem + kModelFileExtension));
    runs.push_back({{"seed", run.config.seed},
                    {"fold", run.fold},
                    {"avg_rel_err", run.validation->avg_rel_err},
                    {"p95_rel_err", run.validation->p95_rel_err},
                    {"n_eval", run.validation->n_eval}});
    std::cout << "seed " << run.config.seed << " fold " << run.fold << " avg_rel_err " << run.validation->avg_rel_err
              << " p95_rel_err " << run.validation->p95_rel_err << '\n';
  }
  nlohmann::json summary = {{"material_id", ds.material_id()}, {"k_folds", c.k_folds}, {"seeds", cv.seeds},
                            {"best_seed", cv.best_seed}, {"seed_mean_avg_rel_err", cv.seed_mean_avg_rel_err},
                            {"parameter_count", parameter_count(c.model)}, {"topology", c.model.label()},
                            {"runs", runs}};
  if (cv.best_pooled) {
    summary["best_pooled_avg_rel_err"] = cv.best_pooled->avg_rel_err;
    summary["best_pooled_p95_rel_err"] = cv.best_pooled->p95_rel_err;
    emit_report(*cv.best_pooled, out / "best_seed");
  }
  write_json(out / "cv_summary.json", summary);
  std::cout << "best seed " << cv.best_seed;
  if (cv.best_pooled)
    std::cout << " pooled avg_rel_err " << cv.best_pooled->avg_rel_err << " p95_rel_err "
              << cv.best_pooled->p95_rel_err;
  std::cout << '\n';
  return kOk;
}

int cmd_sweep(const Options& o) {
  const auto ds = load(o);
  const TrainConfig c = resolve_config(o);
  const auto seeds = resolve_seeds(o, c);
  const std::vector<HardcoreConfig> topo = c.sweep_topologies.empty() ? default_sweep_topologies() : c.sweep_topologies;
  const auto sweep = pareto_sweep(ds, topo, c, seeds, 0, o.threads);
  const fs::path out(o.out);
  write_sweep_table(sweep, out / "sweep.csv");
  nlohmann::json points = nlohmann::json::array();
  for (std::size_t i = 0; i < sweep.points.size(); ++i) {
    const auto& p = sweep.points[i];
    const bool front = std::find(sweep.frontier.begin(), sweep.frontier.end(), i) != sweep.frontier.end();
    points.push_back({{"topology", p.label}, {"parameters", p.parameters}, {"mean_p95_rel_err", nullable(p.error)},
                      {"pareto", front}});
    std::cout << p.label << " parameters " << p.parameters << " mean_p95_rel_err " << p.error
              << (front ? " [pareto]" : "") << '\n';
  }
  write_json(out / "pareto.json", {{"material_id", ds.material_id()}, {"points", points}});
  return kOk;
}

HardcoreModel load_checked_model(const Options& o, const MaterialDataset& ds) {
  if (o.model.empty()) throw UsageError("--model is required");
  HardcoreModel model = load_model(o.model);
  if (model.material_id() != ds.material_id())
    throw DataError("model was trained for material '" + model.material_id() + "' but the data is material '" +
                    ds.material_id() + "' (use --material to set the data's id)");
  return model;
}

int cmd_eval(const Options& o) {
  const auto ds = load(o);
  const HardcoreModel model = load_checked_model(o, ds);
  std::vector<WaveformRecord> labelled;
  for (const auto& r : ds.records())
    if (r.loss) labelled.push_back(r);
  if (labelled.empty()) throw DataError("eval: no record carries Volumetric_losses.csv data");
  const auto pred = model.predict(labelled);
  std::vector<double> p_hat, p;
  MetricsReport m;
  for (std::size_t i = 0; i < labelled.size(); ++i) {
    p_hat.push_back(pred[i].p_hat);
    p.push_back(*labelled[i].loss);
  }
  m = relative_error_stats(p_hat, p);
  m.material_id = ds.material_id();
  m.parameter_count = model.parameter_total();
  m.model_file_size = fs::file_size(o.model);
  for (const auto& r : labelled) m.record_ids.push_back(r.record_id);
  emit_report(m, o.out);
  std::cout << "evaluated " << m.n_eval << " records: avg_rel_err " << m.avg_rel_err << " p95_rel_err "
            << m.p95_rel_err << " max_rel_err " << m.max_rel_err << '\n';
  return kOk;
}

int cmd_predict(const Options& o) {
  const auto ds = load(o);
  const HardcoreModel model = load_checked_model(o, ds);
  const auto pred = model.predict(ds.records());
  fs::create_directories(o.out);
  const fs::path p_path = fs::path(o.out) / "p_hat.csv";
  {
    std::ofstream out(p_path);
    if (!out) throw DataError("cannot write " + p_path.string());
    out.precision(17);
    out << "record_id,p_hat\n";
    for (std::size_t i = 0; i < pred.size(); ++i) out << ds[i].record_id << ',' << pred[i].p_hat << '\n';
  }
  if (o.emit_h) {
    const fs::path h_path = fs::path(o.out) / "H_waveform.csv";
    std::ofstream out(h_path);
    if (!out) throw DataError("cannot write " + h_path.string());
    out.precision(17);
    for (const auto& p : pred) {
      for (std::size_t k = 0; k < p.h_hat.size(); ++k) out << (k ? "," : "") << p.h_hat[k];
      out << '\n';
    }
  }
  std::cout << "predicted " << pred.size() << " records, wrote " << p_path.string() << '\n';
  return kOk;
}

int cmd_synth(const Options& o) {
  SyntheticOptions s;
  s.records = o.records;
  s.seed = o.synth_seed;
  s.factor_amplitude = o.factor_amplitude;
  s.shapes.clear();
  std::stringstream ss(o.shapes);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) s.shapes.push_back(waveform_class_from_string(item));
  if (s.shapes.empty()) throw UsageError("--shapes: empty list");
  const auto ds = make_synthetic_dataset(s, o.material.empty() ? fs::path(o.out).filename().string() : o.material);
  write_material(ds, o.out);
  std::cout << "wrote " << ds.size() << " records to " << o.out << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HARDCORE ferrite core loss model: data checks, training, evaluation and prediction"};
  app.require_subcommand(1, 1);
  Options o;

  auto data = [&](CLI::App* sub, bool required = true) {
    auto* opt = sub->add_option("--data-dir", o.data_dir, "Material directory with the CSV files");
    if (required) opt->required();
    sub->add_option("--material", o.material, "Material id (defaults to the directory name)");
  };
  auto out = [&](CLI::App* sub) { sub->add_option("--out", o.out, "Output directory")->capture_default_str(); };
  auto training = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "INI config file")->check(CLI::ExistingFile);
    sub->add_option("--set", o.overrides, "Config override section.key=value (repeatable)");
    sub->add_option("--seeds", o.seeds, "Comma-separated seeds, e.g. 0,1,2,3,4");
    sub->add_option("--folds", o.folds, "Number of cross-validation folds")->check(CLI::Range(2, 1000));
    sub->add_option("--threads", o.threads, "Worker threads for cv/sweep (0 = all cores)");
    sub->add_flag("-v,--verbose", o.verbose, "Print progress to stderr");
  };

  auto* validate = app.add_subcommand("validate", "Load a material directory and report its contents");
  data(validate);
  auto* bh = app.add_subcommand("bh-analyze", "Histogram of loop-area loss vs measured loss");
  data(bh);
  out(bh);
  auto* classify = app.add_subcommand("classify", "Classify every b waveform");
  data(classify);
  out(classify);
  classify->add_option("--config", o.config, "INI config file")->check(CLI::ExistingFile);
  classify->add_option("--set", o.overrides, "Config override section.key=value (repeatable)");
  auto* train_cmd = app.add_subcommand("train", "Train one model on all records");
  data(train_cmd);
  out(train_cmd);
  training(train_cmd);
  auto* cv = app.add_subcommand("cv", "k-fold cross-validation over seeds");
  data(cv);
  out(cv);
  training(cv);
  auto* sweep = app.add_subcommand("sweep", "Cross-validate several topologies and report the Pareto front");
  data(sweep);
  out(sweep);
  training(sweep);
  auto* eval = app.add_subcommand("eval", "Evaluate a saved model on a labelled directory");
  data(eval);
  out(eval);
  eval->add_option("--model", o.model, "Model file")->required();
  auto* predict = app.add_subcommand("predict", "Write p_hat (and optionally h_hat) for every record");
  data(predict);
  out(predict);
  predict->add_option("--model", o.model, "Model file")->required();
  predict->add_flag("--emit-h", o.emit_h, "Also write H_waveform.csv with 1024 columns per record");
  auto* synth = app.add_subcommand("synth", "Write a synthetic material directory");
  out(synth);
  synth->add_option("--material", o.material, "Material id");
  synth->add_option("--records", o.records, "Number of records")->capture_default_str();
  synth->add_option("--seed", o.synth_seed, "Generator seed")->capture_default_str();
  synth->add_option("--shapes", o.shapes, "Comma-separated waveform classes")->capture_default_str();
  synth->add_option("--factor-amplitude", o.factor_amplitude, "Amplitude of the loss factor")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*validate) return cmd_validate(o);
    if (*bh) return cmd_bh_analyze(o);
    if (*classify) return cmd_classify(o);
    if (*train_cmd) return cmd_train(o);
    if (*cv) return cmd_cv(o);
    if (*sweep) return cmd_sweep(o);
    if (*eval) return cmd_eval(o);
    if (*predict) return cmd_predict(o);
    if (*synth) return cmd_synth(o);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::invalid_argument& e) {
    // config values and overrides
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
