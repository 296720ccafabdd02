// SPDX-License-Identifier: Apache-2.0
/**
 * @file   features.hpp
 * @brief  Normalized time-series channels, scalar features and waveform labels.
 *
 * Series channels per record (each 1024 samples):
 *   0 b_ds  b / b_lim
 *   1 b_n   b / max|b|
 *   2 d1    circular first difference of b_n / d1_lim
 *   3 d2    circular second difference of b_n / d2_lim
 *   4 ttb   tan(0.9 tan(b_n))
 *
 * Scalar features:
 *   0 T / 75 degC            4 ln(delta_b) - max ln(delta_b)
 *   1 (1/f) / max(1/f)       5 mean|db/dt| / max
 *   2 ln(f / 150 kHz)        6 ln(mean|db/dt|) - max ln(mean|db/dt|)
 *   3 delta_b / max          7..10 one-hot {sine, triangular, trapezoidal, other}
 */
#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hardcore/dataset.hpp"

namespace hardcore {

inline constexpr std::size_t kSeriesChannels = 5;
inline constexpr std::size_t kScalarFeatures = 11;
inline constexpr double kTemperatureScale = 75.0;
inline constexpr double kFrequencyScale = 150e3;

enum class WaveformClass { sine = 0, triangular = 1, trapezoidal = 2, other = 3 };

std::string to_string(WaveformClass c);
WaveformClass waveform_class_from_string(const std::string& s);

/// Thresholds of the rule-based waveform classifier.
struct ClassifierThresholds {
  double sine_energy_fraction = 0.99;
  double sine_crest_tolerance = 0.05;
  double triangle_crest_tolerance = 0.08;
  double triangle_harmonic_tolerance = 0.10;
  double trapezoid_quiet_level = 0.01;
  double trapezoid_quiet_fraction = 0.60;
  int trapezoid_max_bursts = 6;
};

struct WaveformShape {
  double crest_factor = 0.0;
  double form_factor = 0.0;
  double fundamental_energy_fraction = 0.0;
  /// Phase-aligned harmonic ratios Re(X_n conj(X_1)^n) / |X_1|^(n+1), n = 1..8.
  std::array<double, 8> harmonic_ratios{};
  double quiet_fraction = 0.0;
  int bursts = 0;
};

WaveformShape analyze_waveform(std::span<const double> b, const ClassifierThresholds& thresholds = {});
WaveformClass classify_waveform(std::span<const double> b, const ClassifierThresholds& thresholds = {});

struct ProfileNormalized {
  std::vector<double> b_n;
  std::optional<std::vector<double>> h_n;
  double profile_scale = 0.0;
};

ProfileNormalized per_profile_normalize(std::span<const double> b, const std::vector<double>* h,
                                        double b_lim, double h_lim);

struct Derivatives {
  std::vector<double> d1;
  std::vector<double> d2;
};

/// Central differences with circular wrap.
Derivatives circular_derivatives(std::span<const double> x);
Derivatives normalize_derivatives(const Derivatives& raw, double d1_lim, double d2_lim);

std::vector<double> tan_tan(std::span<const double> b_n);

/// Peak-to-peak flux density in T.
double peak_to_peak(std::span<const double> b);
/// Mean |db/dt| in T/s with sample spacing 1 / (f * M).
double mean_abs_dbdt(std::span<const double> b, double frequency);

/// Material-wide constants; computed on training records and stored with the model.
struct FeatureNorms {
  double b_lim = 0.0;
  double h_lim = 0.0;
  double d1_lim = 0.0;
  double d2_lim = 0.0;
  double inv_f_max = 0.0;
  double delta_b_max = 0.0;
  double ln_delta_b_max = 0.0;
  double mean_abs_dbdt_max = 0.0;
  double ln_mean_abs_dbdt_max = 0.0;
  ClassifierThresholds thresholds;

  /// Throws std::invalid_argument if any limit is not strictly positive.
  void validate() const;
};

FeatureNorms compute_norms(std::span<const WaveformRecord> records,
                           const ClassifierThresholds& thresholds = {});
FeatureNorms compute_norms(const MaterialDataset& dataset, std::span<const std::size_t> indices,
                           const ClassifierThresholds& thresholds = {});

std::array<double, kScalarFeatures> scalar_features(std::span<const double> b, double frequency,
                                                    double temperature, WaveformClass waveform,
                                                    const FeatureNorms& norms);

struct FeatureBundle {
  std::vector<double> series;  // kSeriesChannels x 1024, channel-major
  std::array<double, kScalarFeatures> scalars{};
  double profile_scale = 0.0;
  std::optional<std::vector<double>> h_n_target;
  WaveformClass waveform = WaveformClass::other;

  std::span<const double> channel(std::size_t c) const {
    return std::span<const double>(series).subspan(c * kSequenceLength, kSequenceLength);
  }
};

FeatureBundle build_features(const WaveformRecord& record, const FeatureNorms& norms);

}  // namespace hardcore
