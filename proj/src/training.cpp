// SPDX-License-Identifier: Apache-2.0
#include "hardcore/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "json.hpp"

#include "hardcore/error.hpp"
#include "hardcore/features.hpp"

namespace hardcore {

using tensor::Tensor;

// ---------------------------------------------------------------------------
// configuration

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("TrainConfig: beta must lie in [0, 1]");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be positive");
  if (lr_decay < 0.0) throw std::invalid_argument("TrainConfig: lr_decay must be >= 0 (0 = automatic)");
  if (k_folds < 2) throw std::invalid_argument("TrainConfig: k_folds must be >= 2");
  if (eval_interval < 1) throw std::invalid_argument("TrainConfig: eval_interval must be >= 1");
  if (chunk_size < 1) throw std::invalid_argument("TrainConfig: chunk_size must be >= 1");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0))
    throw std::invalid_argument("TrainConfig: optimizer betas must lie in [0, 1)");
  model.validate();
}

std::size_t TrainConfig::effective_batch_size(std::size_t n_train) const {
  if (batch_size > 0) return std::min(batch_size, n_train);
  return n_train <= 4096 ? n_train : 1024;
}

double TrainConfig::effective_lr_decay() const {
  if (lr_decay > 0.0) return lr_decay;
  return std::pow(0.01, 1.0 / static_cast<double>(epochs));
}

namespace {

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    const auto a = item.find_first_not_of(" \t");
    const auto b = item.find_last_not_of(" \t");
    if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
  }
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(s, ',')) out.push_back(std::stoul(item));
  return out;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw std::invalid_argument("expected a boolean, got '" + s + "'");
}

void set_key(TrainConfig& c, const std::string& section, const std::string& key, const std::string& value) {
  const std::string name = section.empty() ? key : section + "." + key;
  try {
    if (section == "train" || section.empty()) {
      if (key == "epochs") return void(c.epochs = std::stoi(value));
      if (key == "beta") return void(c.beta = std::stod(value));
      if (key == "batch_size") return void(c.batch_size = std::stoul(value));
      if (key == "learning_rate") return void(c.learning_rate = std::stod(value));
      if (key == "lr_decay") return void(c.lr_decay = std::stod(value));
      if (key == "seed") return void(c.seed = std::stoull(value));
      if (key == "k_folds") return void(c.k_folds = std::stoi(value));
      if (key == "eval_interval") return void(c.eval_interval = std::stoi(value));
      if (key == "chunk_size") return void(c.chunk_size = std::stoul(value));
    } else if (section == "optimizer") {
      if (key == "beta1") return void(c.optimizer.beta1 = std::stod(value));
      if (key == "beta2") return void(c.optimizer.beta2 = std::stod(value));
      if (key == "epsilon") return void(c.optimizer.epsilon = std::stod(value));
      if (key == "nesterov") return void(c.optimizer.nesterov = parse_bool(value));
    } else if (section == "model") {
      auto& m = c.model;
      if (key == "topology") {
        m = config_from_label(value);
        return;
      }
      if (key == "cnn_channels") return void(m.cnn_channels = parse_sizes(value));
      if (key == "kernel_size") return void(m.kernel_size = std::stoul(value));
      if (key == "dilation") return void(m.dilation = std::stoul(value));
      if (key == "scalar_mlp") return void(m.scalar_mlp = parse_sizes(value));
      if (key == "p_mlp") return void(m.p_mlp = parse_sizes(value));
      if (key == "bias_merge_channels") return void(m.bias_merge_channels = std::stoul(value));
      if (key == "cnn_activations") {
        m.cnn_activations.clear();
        for (const auto& a : split_list(value, ',')) m.cnn_activations.push_back(activation_from_string(a));
        return;
      }
    } else if (section == "classifier") {
      auto& t = c.classifier;
      if (key == "sine_energy_fraction") return void(t.sine_energy_fraction = std::stod(value));
      if (key == "sine_crest_tolerance") return void(t.sine_crest_tolerance = std::stod(value));
      if (key == "triangle_crest_tolerance") return void(t.triangle_crest_tolerance = std::stod(value));
      if (key == "triangle_harmonic_tolerance") return void(t.triangle_harmonic_tolerance = std::stod(value));
      if (key == "trapezoid_quiet_level") return void(t.trapezoid_quiet_level = std::stod(value));
      if (key == "trapezoid_quiet_fraction") return void(t.trapezoid_quiet_fraction = std::stod(value));
      if (key == "trapezoid_max_bursts") return void(t.trapezoid_max_bursts = std::stoi(value));
    } else if (section == "sweep") {
      if (key == "topologies") {
        c.sweep_topologies.clear();
        for (const auto& label : split_list(value, ';')) c.sweep_topologies.push_back(config_from_label(label));
        return;
      }
    }
  } catch (const std::logic_error& e) {
    throw std::invalid_argument("config key '" + name + "': invalid value '" + value + "' (" + e.what() + ")");
  }
  throw std::invalid_argument("unknown config key '" + name + "'");
}

}  // namespace

TrainConfig load_train_config(const std::filesystem::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw std::invalid_argument(std::string("cannot parse config: ") + e.what());
  }
  TrainConfig c;
  for (const auto& [section, child] : tree) {
    if (child.empty()) {
      set_key(c, "", section, child.data());
      continue;
    }
    for (const auto& [key, value] : child) set_key(c, section, key, value.data());
  }
  c.validate();
  return c;
}

void apply_config_override(TrainConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw std::invalid_argument("override '" + assignment + "' is not key=value");
  const std::string lhs = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  const auto dot = lhs.find('.');
  if (dot == std::string::npos)
    set_key(config, "", lhs, value);
  else
    set_key(config, lhs.substr(0, dot), lhs.substr(dot + 1), value);
}

// ---------------------------------------------------------------------------
// losses and schedule

Tensor loss_h(const Tensor& h_hat_n, std::span<const double> h_n) { return tensor::mean_squared_error(h_hat_n, h_n); }

Tensor loss_p(const Tensor& p_hat, std::span<const double> p) {
  return tensor::mean_squared_log_error(p_hat, p, kLossFloor);
}

double alpha_schedule(int epoch, int epochs, double beta) {
  return (beta * static_cast<double>(epoch)) / static_cast<double>(epochs);
}

Tensor total_loss(const Tensor& lh, const Tensor& lp, double alpha) {
  return tensor::add(tensor::affine(lp, alpha, 0.0), tensor::affine(lh, 1.0 - alpha, 0.0));
}

// ---------------------------------------------------------------------------
// optimizer

Nadam::Nadam(std::vector<Tensor> parameters, NadamParams params) : params_(std::move(parameters)), hp_(params) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Nadam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Nadam::step(double learning_rate) {
  ++t_;
  const double b1 = hp_.beta1, b2 = hp_.beta2;
  const double t = static_cast<double>(t_);
  const double bc1 = 1.0 - std::pow(b1, t);
  const double bc1_next = 1.0 - std::pow(b1, t + 1.0);
  const double bc2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto g = params_[i].grad();
    if (g.empty()) continue;
    auto x = params_[i].mutable_values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < x.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double m_hat = hp_.nesterov ? b1 * m[j] / bc1_next + (1.0 - b1) * g[j] / bc1 : m[j] / bc1;
      const double v_hat = v[j] / bc2;
      x[j] -= learning_rate * m_hat / (std::sqrt(v_hat) + hp_.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// training

namespace {

struct Prepared {
  std::vector<std::size_t> indices;
  std::vector<FeatureBundle> bundles;
};

Prepared prepare(const MaterialDataset& dataset, std::vector<std::size_t> indices, const FeatureNorms& norms) {
  Prepared p;
  p.indices = std::move(indices);
  p.bundles.reserve(p.indices.size());
  for (std::size_t i : p.indices) p.bundles.push_back(build_features(dataset[i], norms));
  return p;
}

FeatureBatch batch_of(const MaterialDataset& dataset, const Prepared& prep, std::span<const std::size_t> positions,
                      const FeatureNorms& norms) {
  std::vector<const FeatureBundle*> bp;
  std::vector<const WaveformRecord*> rp;
  for (std::size_t pos : positions) {
    bp.push_back(&prep.bundles[pos]);
    rp.push_back(&dataset[prep.indices[pos]]);
  }
  return make_batch(bp, rp, norms);
}

std::vector<double> predict_losses(const HardcoreModel& model, std::span<const FeatureBatch> chunks) {
  tensor::NoGradGuard no_grad;
  std::vector<double> out;
  for (const auto& c : chunks) {
    const auto res = model.forward(c);
    auto v = res.p_hat.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

std::vector<FeatureBatch> chunked(const MaterialDataset& dataset, const Prepared& prep, std::span<const std::size_t> order,
                                  std::size_t chunk, const FeatureNorms& norms) {
  std::vector<FeatureBatch> out;
  for (std::size_t s = 0; s < order.size(); s += chunk)
    out.push_back(batch_of(dataset, prep, order.subspan(s, std::min(chunk, order.size() - s)), norms));
  return out;
}

std::vector<double> targets(const MaterialDataset& dataset, std::span<const std::size_t> indices) {
  std::vector<double> p;
  for (std::size_t i : indices) p.push_back(*dataset[i].loss);
  return p;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

namespace {

// Graph buffers are a few MB each and are freed every step; keeping them on
// the heap instead of fresh mappings avoids repeated page faults.
void retain_large_allocations() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
  });
#endif
}

}  // namespace

TrainRun train(const MaterialDataset& dataset, const FoldSplit* split, std::optional<int> fold,
               const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  retain_large_allocations();
  if (fold && !split) throw std::invalid_argument("train: a fold index requires a fold split");
  if (split && split->assignments.size() != dataset.size())
    throw std::invalid_argument("train: fold split does not match the dataset");

  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const bool held_out = fold && split->fold_of(i) == *fold;
    if (held_out) {
      if (dataset[i].loss) val_idx.push_back(i);
    } else if (dataset[i].trainable()) {
      train_idx.push_back(i);
    }
  }
  if (train_idx.empty()) throw std::invalid_argument("train: no training records with both h and p");

  TrainRun run;
  run.config = config;
  run.fold = fold.value_or(-1);
  run.material_id = dataset.material_id();
  run.training_indices = train_idx;
  run.validation_indices = val_idx;

  const FeatureNorms norms = compute_norms(dataset, train_idx, config.classifier);
  const Prepared train_set = prepare(dataset, train_idx, norms);
  const Prepared val_set = prepare(dataset, val_idx, norms);
  HardcoreModel model(config.model, norms, dataset.material_id(), config.seed);
  Nadam optimizer(model.parameters(), config.optimizer);

  const std::size_t n_train = train_idx.size();
  const std::size_t batch_size = config.effective_batch_size(n_train);
  const bool full_batch = batch_size >= n_train;
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  std::vector<FeatureBatch> fixed_chunks;
  if (full_batch) fixed_chunks = chunked(dataset, train_set, order, config.chunk_size, norms);

  std::vector<std::size_t> val_order(val_idx.size());
  std::iota(val_order.begin(), val_order.end(), 0);
  const std::vector<FeatureBatch> val_chunks = chunked(dataset, val_set, val_order, config.chunk_size, norms);
  const std::vector<double> val_p = targets(dataset, val_idx);

  const double decay = config.effective_lr_decay();
  double lr = config.learning_rate;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    EpochLog entry;
    entry.epoch = epoch;
    entry.alpha = alpha_schedule(epoch, config.epochs, config.beta);
    entry.lr = lr;

    if (!full_batch) seeded_shuffle(order, config.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(epoch + 1)));
    double sum_h = 0.0, sum_p = 0.0;
    for (std::size_t start = 0; start < n_train; start += batch_size) {
      const std::size_t count = std::min(batch_size, n_train - start);
      std::vector<FeatureBatch> local;
      std::span<const FeatureBatch> chunks = fixed_chunks;
      if (!full_batch) {
        local = chunked(dataset, train_set, std::span<const std::size_t>(order).subspan(start, count),
                        config.chunk_size, norms);
        chunks = local;
      }
      optimizer.zero_grad();
      for (const auto& chunk : chunks) {
        const ForwardResult res = model.forward(chunk);
        const Tensor lh = loss_h(res.h_hat_n, chunk.h_n_target);
        const Tensor lp = loss_p(res.p_hat, chunk.loss_target);
        // batch mean = size-weighted mean over chunks
        const double weight = static_cast<double>(chunk.size) / static_cast<double>(count);
        tensor::affine(total_loss(lh, lp, entry.alpha), weight, 0.0).backward();
        sum_h += lh.item() * static_cast<double>(chunk.size);
        sum_p += lp.item() * static_cast<double>(chunk.size);
      }
      if (!std::isfinite(sum_h) || !std::isfinite(sum_p))
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + " (loss_h=" + fmt(sum_h) +
                           ", loss_p=" + fmt(sum_p) + ")");
      optimizer.step(lr);
    }
    entry.loss_h = sum_h / static_cast<double>(n_train);
    entry.loss_p = sum_p / static_cast<double>(n_train);

    const bool last = epoch + 1 == config.epochs;
    if (!val_idx.empty() && (epoch % config.eval_interval == 0 || last)) {
      const auto p_hat = predict_losses(model, val_chunks);
      const MetricsReport m = relative_error_stats(p_hat, val_p);
      entry.val_avg_rel_err = m.avg_rel_err;
      entry.val_p95_rel_err = m.p95_rel_err;
    }
    run.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    lr *= decay;
  }

  std::iota(order.begin(), order.end(), 0);
  const std::vector<FeatureBatch> final_train_chunks =
      full_batch ? std::move(fixed_chunks) : chunked(dataset, train_set, order, config.chunk_size, norms);
  run.training_p_hat = predict_losses(model, final_train_chunks);
  if (!val_idx.empty()) {
    run.validation_p_hat = predict_losses(model, val_chunks);
    MetricsReport m = relative_error_stats(run.validation_p_hat, val_p);
    m.material_id = dataset.material_id();
    m.parameter_count = model.parameter_total();
    for (std::size_t i : val_idx) m.record_ids.push_back(dataset[i].record_id);
    run.validation = std::move(m);
  }
  run.model = std::move(model);
  return run;
}

std::vector<int> default_strata(const MaterialDataset& dataset, const ClassifierThresholds& thresholds) {
  const std::vector<int> quartiles = frequency_quartiles(dataset);
  std::vector<int> labels(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i)
    labels[i] = static_cast<int>(classify_waveform(dataset[i].b, thresholds)) * 4 + quartiles[i];
  return labels;
}

CrossValidation cross_validate(const MaterialDataset& dataset, const TrainConfig& config,
                               std::span<const std::uint64_t> seeds, std::uint64_t split_seed, unsigned workers) {
  config.validate();
  if (seeds.empty()) throw std::invalid_argument("cross_validate: need at least one seed");
  const FoldSplit split = stratified_kfold(dataset, config.k_folds, split_seed, default_strata(dataset, config.classifier));

  struct Task {
    std::uint64_t seed;
    int fold;
  };
  std::vector<Task> tasks;
  for (auto s : seeds)
    for (int f = 0; f < config.k_folds; ++f) tasks.push_back({s, f});

  std::vector<std::optional<TrainRun>> results(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        TrainConfig c = config;
        c.seed = tasks[i].seed;
        results[i] = train(dataset, &split, tasks[i].fold, c);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  unsigned n_workers = workers ? workers : std::max(1u, std::thread::hardware_concurrency());
  n_workers = std::min<unsigned>(n_workers, static_cast<unsigned>(tasks.size()));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  CrossValidation cv;
  cv.seeds.assign(seeds.begin(), seeds.end());
  for (auto& r : results) cv.runs.push_back(std::move(*r));

  double best = std::numeric_limits<double>::infinity();
  for (std::size_t si = 0; si < seeds.size(); ++si) {
    double acc = 0.0;
    int n = 0;
    for (int f = 0; f < config.k_folds; ++f) {
      const auto& run = cv.runs[si * static_cast<std::size_t>(config.k_folds) + static_cast<std::size_t>(f)];
      if (run.validation) {
        acc += run.validation->avg_rel_err;
        ++n;
      }
    }
    const double mean = n ? acc / n : std::numeric_limits<double>::infinity();
    cv.seed_mean_avg_rel_err.push_back(mean);
    if (mean < best) {
      best = mean;
      cv.best_seed = seeds[si];
    }
  }

  std::vector<double> p_hat, p;
  std::vector<std::string> ids;
  for (const auto& run : cv.runs) {
    if (run.config.seed != cv.best_seed || !run.validation) continue;
    p_hat.insert(p_hat.end(), run.validation->p_hat.begin(), run.validation->p_hat.end());
    p.insert(p.end(), run.validation->p.begin(), run.validation->p.end());
    ids.insert(ids.end(), run.validation->record_ids.begin(), run.validation->record_ids.end());
  }
  if (!p.empty()) {
    MetricsReport pooled = relative_error_stats(p_hat, p);
    pooled.material_id = dataset.material_id();
    pooled.record_ids = std::move(ids);
    pooled.parameter_count = parameter_count(config.model);
    cv.best_pooled = std::move(pooled);
  }
  return cv;
}

void write_epoch_log(std::span<const EpochLog> log, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  for (const auto& e : log) {
    nlohmann::json j = {{"epoch", e.epoch},
                        {"loss_h", num(e.loss_h)},
                        {"loss_p", num(e.loss_p)},
                        {"alpha", e.alpha},
                        {"lr", e.lr},
                        {"val_avg_rel_err", num(e.val_avg_rel_err)},
                        {"val_p95_rel_err", num(e.val_p95_rel_err)}};
    out << j.dump() << '\n';
  }
}

}  // namespace hardcore
