// SPDX-License-Identifier: Apache-2.0
/**
 * @file   model.hpp
 * @brief  Residual dilated-CNN h-predictor with a scaled-shoelace p-predictor.
 *
 * Forward pass for a batch of feature bundles:
 *
 *   a1   = conv1(series)                          (weight-normed, circular)
 *   a1  += mlp(scalars) on the first `bias_merge_channels` channels
 *   a    = act1(a1) -> conv2 -> act2 -> ... -> convL (1 channel)
 *   h_n  = a + b_n, then the time mean is removed
 *   h    = h_n * h_lim * max|b| / b_lim
 *   s    = p_mlp(scalars)                         (ends in tanh)
 *   p    = f * (0.5 + 0.1 s) * sum_i b_i (h_{i-1} - h_{i+1})
 *
 * Parameters are stored and serialized in this order: for every conv layer
 * direction (out x in x kernel), gain (out), bias (out); then every scalar
 * MLP layer weight (out x in), bias (out); then every p-MLP layer likewise.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hardcore/features.hpp"
#include "hardcore/tensor.hpp"

namespace hardcore {

enum class Activation { tanh, linear };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct HardcoreConfig {
  std::vector<std::size_t> cnn_channels{12, 8, 1};
  std::size_t kernel_size = 9;
  std::size_t dilation = 4;
  std::vector<Activation> cnn_activations{Activation::tanh, Activation::tanh, Activation::linear};
  std::vector<std::size_t> scalar_mlp{11};
  std::vector<std::size_t> p_mlp{8, 1};
  std::size_t bias_merge_channels = 11;
  std::size_t series_inputs = kSeriesChannels;
  std::size_t scalar_inputs = kScalarFeatures;

  /// Throws std::invalid_argument on an inconsistent topology.
  void validate() const;
  /// Compact label such as "12-8-1/k9/d4/m11/p8-1".
  std::string label() const;
};

/// Parses the label() notation back into a config (activations default to
/// tanh on hidden layers and linear on the output layer).
HardcoreConfig config_from_label(const std::string& label);

std::size_t parameter_count(const HardcoreConfig& config);

/// Inputs for a batch, laid out contiguously.
struct FeatureBatch {
  std::size_t size = 0;
  std::vector<double> series;       // size x series_inputs x M
  std::vector<double> scalars;      // size x scalar_inputs
  std::vector<double> b_n;          // size x M
  std::vector<double> b;            // size x M, tesla
  std::vector<double> frequency;    // size
  std::vector<double> denorm;       // size, h_lim * max|b| / b_lim
  std::vector<double> h_n_target;   // size x M, empty unless every record has h
  std::vector<double> loss_target;  // size, empty unless every record has p
};

/// Assembles a batch from bundles and their source records.
FeatureBatch make_batch(std::span<const FeatureBundle* const> bundles,
                        std::span<const WaveformRecord* const> records, const FeatureNorms& norms);

struct ForwardResult {
  tensor::Tensor h_hat_n;  // size x 1 x M
  tensor::Tensor h_hat;    // size x 1 x M, A/m
  tensor::Tensor scale;    // size x 1, s in (-1, 1)
  tensor::Tensor p_hat;    // size x 1, W/m^3
};

struct Prediction {
  std::vector<double> h_hat_n;
  std::vector<double> h_hat;
  double scale = 0.0;
  double p_hat = 0.0;
};

class HardcoreModel {
 public:
  /// Parameters initialized from `seed`: directions uniform in +-1/sqrt(fan_in),
  /// gains equal to the direction norms, linear weights likewise, biases zero.
  HardcoreModel(HardcoreConfig config, FeatureNorms norms, std::string material_id, std::uint64_t seed);

  // Tensors are shared handles, so copies would alias parameters; use clone().
  HardcoreModel(const HardcoreModel&) = delete;
  HardcoreModel& operator=(const HardcoreModel&) = delete;
  HardcoreModel(HardcoreModel&&) = default;
  HardcoreModel& operator=(HardcoreModel&&) = default;

  const HardcoreConfig& config() const { return config_; }
  const FeatureNorms& norms() const { return norms_; }
  const std::string& material_id() const { return material_id_; }

  /// All trainable tensors in serialization order.
  std::vector<tensor::Tensor> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::size_t parameter_total() const;

  /// Records the autodiff graph unless a NoGradGuard is active.
  ForwardResult forward(const FeatureBatch& batch) const;

  /// Graph-free inference on one record.
  Prediction predict(const WaveformRecord& record) const;
  std::vector<Prediction> predict(std::span<const WaveformRecord> records, std::size_t chunk = 64) const;

  HardcoreModel clone() const;

  // Direct layer access, used by tests.
  struct DenseLayer {
    tensor::Tensor weight;
    tensor::Tensor bias;
  };
  std::vector<tensor::WeightNormedKernel>& conv_layers() { return conv_; }
  std::vector<DenseLayer>& scalar_layers() { return scalar_; }
  std::vector<DenseLayer>& p_layers() { return p_; }

 private:
  HardcoreConfig config_;
  FeatureNorms norms_;
  std::string material_id_;
  std::vector<tensor::WeightNormedKernel> conv_;
  std::vector<DenseLayer> scalar_;
  std::vector<DenseLayer> p_;
};

inline constexpr int kModelFormatVersion = 1;
inline constexpr const char* kModelFormatMagic = "hardcore-model";
inline constexpr const char* kModelFileExtension = ".hardcore.json";

std::string model_to_json_text(const HardcoreModel& model);
HardcoreModel model_from_json_text(const std::string& text);
void save_model(const HardcoreModel& model, const std::filesystem::path& path);
/// Throws DataError on wrong magic, version mismatch or truncated content.
HardcoreModel load_model(const std::filesystem::path& path);

}  // namespace hardcore
