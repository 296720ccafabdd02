// SPDX-License-Identifier: Apache-2.0
#include "hardcore/model.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "hardcore/error.hpp"

namespace hardcore {

using tensor::Shape;
using tensor::Tensor;
using json = nlohmann::json;

namespace {

double uniform_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
}

std::vector<double> uniform_values(std::mt19937_64& rng, std::size_t n, double bound) {
  std::vector<double> v(n);
  for (auto& x : v) x = (2.0 * uniform_unit(rng) - 1.0) * bound;
  return v;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "-" : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, '-')) {
    if (item.empty()) throw std::invalid_argument("bad layer list '" + s + "'");
    out.push_back(std::stoul(item));
  }
  return out;
}

Tensor activate(const Tensor& x, Activation a) { return a == Activation::tanh ? tensor::tanh(x) : x; }

}  // namespace

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "linear"; }

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "linear") return Activation::linear;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

// ---------------------------------------------------------------------------
// config

void HardcoreConfig::validate() const {
  auto bad = [](const std::string& what) { throw std::invalid_argument("HardcoreConfig: " + what); };
  if (cnn_channels.empty()) bad("need at least one conv layer");
  if (cnn_channels.back() != 1) bad("last conv layer must have exactly 1 output channel");
  for (auto c : cnn_channels)
    if (c == 0) bad("conv layers need at least one channel");
  if (cnn_activations.size() != cnn_channels.size()) bad("one activation per conv layer required");
  if (kernel_size % 2 == 0) bad("kernel size must be odd");
  if (dilation < 1) bad("dilation must be >= 1");
  if ((kernel_size - 1) * dilation >= kSequenceLength) bad("receptive field per layer exceeds sequence length");
  if (series_inputs == 0) bad("need at least one series input");
  if (scalar_mlp.empty()) {
    if (bias_merge_channels != 0) bad("bias_merge_channels must be 0 without a scalar MLP");
  } else {
    if (scalar_mlp.back() != bias_merge_channels) bad("scalar MLP output width must equal bias_merge_channels");
    if (bias_merge_channels > cnn_channels.front()) bad("bias_merge_channels exceeds first conv layer width");
  }
  if (!p_mlp.empty() && p_mlp.back() != 1) bad("p-predictor MLP must end in a single neuron");
  for (auto w : scalar_mlp)
    if (w == 0) bad("empty MLP layer");
  for (auto w : p_mlp)
    if (w == 0) bad("empty MLP layer");
}

std::string HardcoreConfig::label() const {
  return join(cnn_channels) + "/k" + std::to_string(kernel_size) + "/d" + std::to_string(dilation) + "/m" +
         join(scalar_mlp) + "/p" + join(p_mlp);
}

HardcoreConfig config_from_label(const std::string& label) {
  HardcoreConfig c;
  std::stringstream ss(label);
  std::string part;
  bool first = true;
  while (std::getline(ss, part, '/')) {
    if (first) {
      c.cnn_channels = split_sizes(part);
      first = false;
      continue;
    }
    if (part.empty()) throw std::invalid_argument("config_from_label: empty field in '" + label + "'");
    const std::string rest = part.substr(1);
    switch (part[0]) {
      case 'k': c.kernel_size = std::stoul(rest); break;
      case 'd': c.dilation = std::stoul(rest); break;
      case 'm': c.scalar_mlp = split_sizes(rest); break;
      case 'p': c.p_mlp = split_sizes(rest); break;
      default: throw std::invalid_argument("config_from_label: unknown field '" + part + "'");
    }
  }
  c.cnn_activations.assign(c.cnn_channels.size(), Activation::tanh);
  if (!c.cnn_activations.empty()) c.cnn_activations.back() = Activation::linear;
  c.bias_merge_channels = c.scalar_mlp.empty() ? 0 : c.scalar_mlp.back();
  c.validate();
  return c;
}

std::size_t parameter_count(const HardcoreConfig& config) {
  config.validate();
  std::size_t total = 0;
  std::size_t in = config.series_inputs;
  for (auto out : config.cnn_channels) {
    total += out * in * config.kernel_size + out + out;
    in = out;
  }
  for (const auto* mlp : {&config.scalar_mlp, &config.p_mlp}) {
    std::size_t fin = config.scalar_inputs;
    for (auto fout : *mlp) {
      total += fout * fin + fout;
      fin = fout;
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// batches

FeatureBatch make_batch(std::span<const FeatureBundle* const> bundles,
                        std::span<const WaveformRecord* const> records, const FeatureNorms& norms) {
  if (bundles.size() != records.size()) throw std::invalid_argument("make_batch: bundle/record count mismatch");
  const std::size_t n = bundles.size(), m = kSequenceLength;
  FeatureBatch batch;
  batch.size = n;
  batch.series.reserve(n * kSeriesChannels * m);
  batch.scalars.reserve(n * kScalarFeatures);
  batch.b_n.reserve(n * m);
  batch.b.reserve(n * m);
  bool all_h = true, all_p = true;
  for (std::size_t i = 0; i < n; ++i) {
    const FeatureBundle& fb = *bundles[i];
    const WaveformRecord& r = *records[i];
    if (r.b.size() != m || fb.series.size() != kSeriesChannels * m)
      throw std::invalid_argument("make_batch: unexpected sequence length");
    batch.series.insert(batch.series.end(), fb.series.begin(), fb.series.end());
    batch.scalars.insert(batch.scalars.end(), fb.scalars.begin(), fb.scalars.end());
    auto bn = fb.channel(1);
    batch.b_n.insert(batch.b_n.end(), bn.begin(), bn.end());
    batch.b.insert(batch.b.end(), r.b.begin(), r.b.end());
    batch.frequency.push_back(r.frequency);
    batch.denorm.push_back(norms.h_lim * fb.profile_scale / norms.b_lim);
    all_h = all_h && fb.h_n_target.has_value();
    all_p = all_p && r.loss.has_value();
  }
  if (all_h)
    for (std::size_t i = 0; i < n; ++i)
      batch.h_n_target.insert(batch.h_n_target.end(), bundles[i]->h_n_target->begin(), bundles[i]->h_n_target->end());
  if (all_p)
    for (std::size_t i = 0; i < n; ++i) batch.loss_target.push_back(*records[i]->loss);
  return batch;
}

// ---------------------------------------------------------------------------
// model

HardcoreModel::HardcoreModel(HardcoreConfig config, FeatureNorms norms, std::string material_id,
                             std::uint64_t seed)
    : config_(std::move(config)), norms_(norms), material_id_(std::move(material_id)) {
  config_.validate();
  norms_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t k = config_.kernel_size;
  std::size_t in = config_.series_inputs;
  for (auto out : config_.cnn_channels) {
    const std::size_t fan_in = in * k;
    auto v = uniform_values(rng, out * fan_in, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    std::vector<double> g(out);
    for (std::size_t o = 0; o < out; ++o) {
      double sq = 0.0;
      for (std::size_t i = 0; i < fan_in; ++i) sq += v[o * fan_in + i] * v[o * fan_in + i];
      g[o] = std::sqrt(sq);
    }
    conv_.push_back({Tensor::parameter(Shape{out, in, k}, std::move(v)), Tensor::parameter(Shape{out}, std::move(g)),
                     Tensor::parameter(Shape{out}, std::vector<double>(out, 0.0))});
    in = out;
  }
  auto build_mlp = [&](const std::vector<std::size_t>& widths, std::vector<DenseLayer>& layers) {
    std::size_t fin = config_.scalar_inputs;
    for (auto fout : widths) {
      auto w = uniform_values(rng, fout * fin, 1.0 / std::sqrt(static_cast<double>(fin)));
      layers.push_back({Tensor::parameter(Shape{fout, fin}, std::move(w)),
                        Tensor::parameter(Shape{fout}, std::vector<double>(fout, 0.0))});
      fin = fout;
    }
  };
  build_mlp(config_.scalar_mlp, scalar_);
  build_mlp(config_.p_mlp, p_);
}

std::vector<Tensor> HardcoreModel::parameters() const {
  std::vector<Tensor> out;
  for (const auto& c : conv_) {
    out.push_back(c.direction);
    out.push_back(c.gain);
    out.push_back(c.bias);
  }
  for (const auto* layers : {&scalar_, &p_})
    for (const auto& l : *layers) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
  return out;
}

std::vector<std::string> HardcoreModel::parameter_names() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < conv_.size(); ++i)
    for (const char* n : {"direction", "gain", "bias"}) out.push_back("conv" + std::to_string(i) + "." + n);
  for (std::size_t i = 0; i < scalar_.size(); ++i)
    for (const char* n : {"weight", "bias"}) out.push_back("scalar_mlp" + std::to_string(i) + "." + n);
  for (std::size_t i = 0; i < p_.size(); ++i)
    for (const char* n : {"weight", "bias"}) out.push_back("p_mlp" + std::to_string(i) + "." + n);
  return out;
}

std::size_t HardcoreModel::parameter_total() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.size();
  return n;
}

ForwardResult HardcoreModel::forward(const FeatureBatch& batch) const {
  const std::size_t n = batch.size, m = kSequenceLength;
  if (n == 0) throw std::invalid_argument("forward: empty batch");
  if (batch.series.size() != n * config_.series_inputs * m || batch.scalars.size() != n * config_.scalar_inputs ||
      batch.b_n.size() != n * m || batch.b.size() != n * m || batch.frequency.size() != n || batch.denorm.size() != n)
    throw std::invalid_argument("forward: batch shape does not match model inputs");

  const Tensor series = Tensor::constant(Shape{n, config_.series_inputs, m}, batch.series);
  const Tensor scalars = Tensor::constant(Shape{n, config_.scalar_inputs}, batch.scalars);

  Tensor a = tensor::conv1d_circular(series, conv_[0], config_.dilation);
  if (!scalar_.empty()) {
    Tensor z = scalars;
    for (const auto& l : scalar_) z = tensor::tanh(tensor::linear(z, l.weight, l.bias));
    a = tensor::broadcast_add_channels(a, z);
  }
  a = activate(a, config_.cnn_activations[0]);
  for (std::size_t i = 1; i < conv_.size(); ++i)
    a = activate(tensor::conv1d_circular(a, conv_[i], config_.dilation), config_.cnn_activations[i]);

  ForwardResult out;
  out.h_hat_n = tensor::subtract_time_mean(tensor::add(a, Tensor::constant(Shape{n, 1, m}, batch.b_n)));
  out.h_hat = tensor::scale_rows(out.h_hat_n, batch.denorm);

  if (!p_.empty()) {
    Tensor z = scalars;
    for (const auto& l : p_) z = tensor::tanh(tensor::linear(z, l.weight, l.bias));
    out.scale = z;
  } else {
    out.scale = Tensor::constant(Shape{n, 1}, std::vector<double>(n, 0.0));
  }
  const Tensor factor = tensor::affine(out.scale, 0.1, 0.5);
  const Tensor area = tensor::shoelace_sum(batch.b, out.h_hat);
  out.p_hat = tensor::scale_rows(tensor::mul(factor, area), batch.frequency);
  return out;
}

std::vector<Prediction> HardcoreModel::predict(std::span<const WaveformRecord> records, std::size_t chunk) const {
  tensor::NoGradGuard no_grad;
  std::vector<Prediction> out;
  out.reserve(records.size());
  const std::size_t m = kSequenceLength;
  chunk = std::max<std::size_t>(chunk, 1);
  for (std::size_t start = 0; start < records.size(); start += chunk) {
    const std::size_t end = std::min(records.size(), start + chunk);
    std::vector<FeatureBundle> bundles;
    std::vector<const FeatureBundle*> bp;
    std::vector<const WaveformRecord*> rp;
    bundles.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) {
      bundles.push_back(build_features(records[i], norms_));
      rp.push_back(&records[i]);
    }
    for (const auto& b : bundles) bp.push_back(&b);
    const ForwardResult res = forward(make_batch(bp, rp, norms_));
    for (std::size_t i = 0; i < end - start; ++i) {
      Prediction p;
      auto hn = res.h_hat_n.values().subspan(i * m, m);
      auto h = res.h_hat.values().subspan(i * m, m);
      p.h_hat_n.assign(hn.begin(), hn.end());
      p.h_hat.assign(h.begin(), h.end());
      p.scale = res.scale.values()[i];
      p.p_hat = res.p_hat.values()[i];
      out.push_back(std::move(p));
    }
  }
  return out;
}

Prediction HardcoreModel::predict(const WaveformRecord& record) const {
  return std::move(predict(std::span<const WaveformRecord>(&record, 1)).front());
}

HardcoreModel HardcoreModel::clone() const {
  HardcoreModel copy(config_, norms_, material_id_, 0);
  auto src = parameters();
  auto dst = copy.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto s = src[i].values();
    std::copy(s.begin(), s.end(), dst[i].mutable_values().begin());
  }
  return copy;
}

// ---------------------------------------------------------------------------
// serialization

namespace {

json norms_to_json(const FeatureNorms& n) {
  const auto& t = n.thresholds;
  return {{"b_lim", n.b_lim},
          {"h_lim", n.h_lim},
          {"d1_lim", n.d1_lim},
          {"d2_lim", n.d2_lim},
          {"inv_f_max", n.inv_f_max},
          {"delta_b_max", n.delta_b_max},
          {"ln_delta_b_max", n.ln_delta_b_max},
          {"mean_abs_dbdt_max", n.mean_abs_dbdt_max},
          {"ln_mean_abs_dbdt_max", n.ln_mean_abs_dbdt_max},
          {"classifier",
           {{"sine_energy_fraction", t.sine_energy_fraction},
            {"sine_crest_tolerance", t.sine_crest_tolerance},
            {"triangle_crest_tolerance", t.triangle_crest_tolerance},
            {"triangle_harmonic_tolerance", t.triangle_harmonic_tolerance},
            {"trapezoid_quiet_level", t.trapezoid_quiet_level},
            {"trapezoid_quiet_fraction", t.trapezoid_quiet_fraction},
            {"trapezoid_max_bursts", t.trapezoid_max_bursts}}}};
}

FeatureNorms norms_from_json(const json& j) {
  FeatureNorms n;
  n.b_lim = j.at("b_lim").get<double>();
  n.h_lim = j.at("h_lim").get<double>();
  n.d1_lim = j.at("d1_lim").get<double>();
  n.d2_lim = j.at("d2_lim").get<double>();
  n.inv_f_max = j.at("inv_f_max").get<double>();
  n.delta_b_max = j.at("delta_b_max").get<double>();
  n.ln_delta_b_max = j.at("ln_delta_b_max").get<double>();
  n.mean_abs_dbdt_max = j.at("mean_abs_dbdt_max").get<double>();
  n.ln_mean_abs_dbdt_max = j.at("ln_mean_abs_dbdt_max").get<double>();
  const json& c = j.at("classifier");
  auto& t = n.thresholds;
  t.sine_energy_fraction = c.at("sine_energy_fraction").get<double>();
  t.sine_crest_tolerance = c.at("sine_crest_tolerance").get<double>();
  t.triangle_crest_tolerance = c.at("triangle_crest_tolerance").get<double>();
  t.triangle_harmonic_tolerance = c.at("triangle_harmonic_tolerance").get<double>();
  t.trapezoid_quiet_level = c.at("trapezoid_quiet_level").get<double>();
  t.trapezoid_quiet_fraction = c.at("trapezoid_quiet_fraction").get<double>();
  t.trapezoid_max_bursts = c.at("trapezoid_max_bursts").get<int>();
  return n;
}

json config_to_json(const HardcoreConfig& c) {
  std::vector<std::string> acts;
  for (auto a : c.cnn_activations) acts.push_back(to_string(a));
  return {{"cnn_channels", c.cnn_channels},   {"kernel_size", c.kernel_size},
          {"dilation", c.dilation},           {"cnn_activations", acts},
          {"scalar_mlp", c.scalar_mlp},       {"p_mlp", c.p_mlp},
          {"bias_merge_channels", c.bias_merge_channels}, {"series_inputs", c.series_inputs},
          {"scalar_inputs", c.scalar_inputs}};
}

HardcoreConfig config_from_json(const json& j) {
  HardcoreConfig c;
  c.cnn_channels = j.at("cnn_channels").get<std::vector<std::size_t>>();
  c.kernel_size = j.at("kernel_size").get<std::size_t>();
  c.dilation = j.at("dilation").get<std::size_t>();
  c.cnn_activations.clear();
  for (const auto& a : j.at("cnn_activations")) c.cnn_activations.push_back(activation_from_string(a.get<std::string>()));
  c.scalar_mlp = j.at("scalar_mlp").get<std::vector<std::size_t>>();
  c.p_mlp = j.at("p_mlp").get<std::vector<std::size_t>>();
  c.bias_merge_channels = j.at("bias_merge_channels").get<std::size_t>();
  c.series_inputs = j.at("series_inputs").get<std::size_t>();
  c.scalar_inputs = j.at("scalar_inputs").get<std::size_t>();
  return c;
}

}  // namespace

std::string model_to_json_text(const HardcoreModel& model) {
  json j;
  j["format"] = kModelFormatMagic;
  j["format_version"] = kModelFormatVersion;
  j["material_id"] = model.material_id();
  j["config"] = config_to_json(model.config());
  j["norms"] = norms_to_json(model.norms());
  json params = json::array();
  const auto tensors = model.parameters();
  const auto names = model.parameter_names();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& s = tensors[i].shape();
    std::vector<std::size_t> dims(s.dims.begin(), s.dims.begin() + static_cast<std::ptrdiff_t>(s.rank));
    auto v = tensors[i].values();
    params.push_back({{"name", names[i]}, {"shape", dims}, {"values", std::vector<double>(v.begin(), v.end())}});
  }
  j["parameters"] = std::move(params);
  return j.dump();
}

HardcoreModel model_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("model file is not valid JSON (truncated?): ") + e.what());
  }
  try {
    if (!j.is_object() || j.value("format", std::string{}) != kModelFormatMagic)
      throw DataError("not a hardcore model file (bad format tag)");
    const int version = j.at("format_version").get<int>();
    if (version != kModelFormatVersion)
      throw DataError("unsupported model format version " + std::to_string(version) + ", expected " +
                      std::to_string(kModelFormatVersion));
    HardcoreModel model(config_from_json(j.at("config")), norms_from_json(j.at("norms")),
                        j.at("material_id").get<std::string>(), 0);
    const json& params = j.at("parameters");
    auto tensors = model.parameters();
    auto names = model.parameter_names();
    if (params.size() != tensors.size())
      throw DataError("model file lists " + std::to_string(params.size()) + " tensors, config implies " +
                      std::to_string(tensors.size()));
    std::size_t total = 0;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const json& p = params[i];
      if (p.at("name").get<std::string>() != names[i])
        throw DataError("model tensor " + std::to_string(i) + " is '" + p.at("name").get<std::string>() +
                        "', expected '" + names[i] + "'");
      const auto values = p.at("values").get<std::vector<double>>();
      auto dst = tensors[i].mutable_values();
      if (values.size() != dst.size())
        throw DataError("model tensor '" + names[i] + "' has " + std::to_string(values.size()) + " values, expected " +
                        std::to_string(dst.size()));
      std::copy(values.begin(), values.end(), dst.begin());
      total += values.size();
    }
    if (total != parameter_count(model.config())) throw DataError("parameter total does not match config");
    return model;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed model file: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("inconsistent model file: ") + e.what());
  }
}

void save_model(const HardcoreModel& model, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << model_to_json_text(model) << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

HardcoreModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_json_text(ss.str());
}

}  // namespace hardcore
