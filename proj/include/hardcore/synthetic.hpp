// SPDX-License-Identifier: Apache-2.0
/**
 * @file   synthetic.hpp
 * @brief  Synthetic hysteresis-loop datasets for tests and desk-scale runs.
 *
 * Each record draws f log-uniform in [f_min, f_max], T uniform in [t_min, t_max]
 * and a peak flux density log-uniform in [b_min, b_max]. With the excitation
 * phase theta_k = 2 pi k / M + phi:
 *
 *   b_k = B w(theta_k)
 *   h_k = H w(theta_k + lag)
 *   H   = 40 (B / 0.1)^1.3 (1 - 0.004 (T - 25)) (f / 150 kHz)^0.1
 *   lag = 0.15 + 0.1 log10(f / 150 kHz) - 0.0008 (T - 25)
 *   p   = f * shoelace_area(b, h) * c,   c = 1 + factor_amplitude sin(psi)
 *
 * where w is the unit waveform of the record's shape and psi is a smooth
 * function of ln f and T that sweeps more than one period over the ranges.
 */
#pragma once

#include <cstdint>
#include <vector>

#include "hardcore/dataset.hpp"
#include "hardcore/features.hpp"

namespace hardcore {

struct SyntheticOptions {
  std::size_t records = 1000;
  std::uint64_t seed = 0;
  double f_min = 50e3, f_max = 500e3;
  double t_min = 25.0, t_max = 90.0;
  double b_min = 0.01, b_max = 0.3;
  double factor_amplitude = 0.05;
  /// Shapes drawn uniformly per record; {sine} gives pure elliptic loops.
  std::vector<WaveformClass> shapes{WaveformClass::sine};
  bool with_h = true;
  bool with_loss = true;
};

/// Unit-amplitude periodic waveform of the given class at phase theta.
/// The trapezoid holds flat for 40% of each half period.
double unit_waveform(WaveformClass shape, double theta);

/// Multiplier c applied to the loop-area loss of a record.
double synthetic_loss_factor(double frequency, double temperature, const SyntheticOptions& options);

MaterialDataset make_synthetic_dataset(const SyntheticOptions& options, const std::string& material_id = "synthetic");

}  // namespace hardcore
