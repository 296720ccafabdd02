// SPDX-License-Identifier: Apache-2.0
#include "hardcore/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "hardcore/magloss.hpp"

namespace hardcore {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Portable uniform draw in [0, 1).
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double log_uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::exp(std::log(lo) + uniform01(rng) * (std::log(hi) - std::log(lo)));
}

}  // namespace

double unit_waveform(WaveformClass shape, double theta) {
  double u = std::fmod(theta / kTwoPi, 1.0);
  if (u < 0.0) u += 1.0;
  switch (shape) {
    case WaveformClass::sine: return std::sin(kTwoPi * u);
    case WaveformClass::triangular: {
      // peaks at u = 0.25 (+1) and u = 0.75 (-1)
      if (u < 0.25) return 4.0 * u;
      if (u < 0.75) return 2.0 - 4.0 * u;
      return 4.0 * u - 4.0;
    }
    case WaveformClass::trapezoidal: {
      // flat top of width 0.2 centred in each half period, linear ramps through zero
      auto half = [](double v) { return std::min(1.0, (0.25 - std::abs(v - 0.25)) / 0.15); };
      return u < 0.5 ? half(u) : -half(u - 0.5);
    }
    case WaveformClass::other: {
      // sine with a strong third harmonic
      return (std::sin(kTwoPi * u) + 0.4 * std::sin(3.0 * kTwoPi * u + 0.7)) / 1.2;
    }
  }
  throw std::invalid_argument("unit_waveform: unknown shape");
}

double synthetic_loss_factor(double frequency, double temperature, const SyntheticOptions& o) {
  const double u = std::log(frequency / o.f_min) / std::log(o.f_max / o.f_min);
  const double v = (temperature - o.t_min) / (o.t_max - o.t_min);
  const double psi = kTwoPi * (u + 0.5 * v);
  return 1.0 + o.factor_amplitude * std::sin(psi);
}

MaterialDataset make_synthetic_dataset(const SyntheticOptions& o, const std::string& material_id) {
  if (o.records == 0) throw std::invalid_argument("make_synthetic_dataset: records must be positive");
  if (o.shapes.empty()) throw std::invalid_argument("make_synthetic_dataset: no shapes given");
  if (!(o.f_min > 0 && o.f_max > o.f_min && o.b_min > 0 && o.b_max >= o.b_min && o.t_max >= o.t_min))
    throw std::invalid_argument("make_synthetic_dataset: invalid ranges");
  if (o.with_loss && !o.with_h) throw std::invalid_argument("make_synthetic_dataset: loss requires h");

  std::mt19937_64 rng(o.seed);
  const std::size_t m = kSequenceLength;
  std::vector<WaveformRecord> records;
  records.reserve(o.records);
  for (std::size_t i = 0; i < o.records; ++i) {
    const double f = log_uniform(rng, o.f_min, o.f_max);
    const double t = o.t_min + uniform01(rng) * (o.t_max - o.t_min);
    const double amp = log_uniform(rng, o.b_min, o.b_max);
    const double phase = kTwoPi * uniform01(rng);
    const WaveformClass shape = o.shapes[static_cast<std::size_t>(uniform01(rng) * o.shapes.size())];

    const double h_amp = 40.0 * std::pow(amp / 0.1, 1.3) * (1.0 - 0.004 * (t - 25.0)) * std::pow(f / 150e3, 0.1);
    const double lag = 0.15 + 0.1 * std::log10(f / 150e3) - 0.0008 * (t - 25.0);

    WaveformRecord r;
    r.frequency = f;
    r.temperature = t;
    r.record_id = std::to_string(i);
    r.b.resize(m);
    std::vector<double> h(m);
    for (std::size_t k = 0; k < m; ++k) {
      const double theta = kTwoPi * static_cast<double>(k) / static_cast<double>(m) + phase;
      r.b[k] = amp * unit_waveform(shape, theta);
      h[k] = h_amp * unit_waveform(shape, theta + lag);
    }
    if (o.with_loss) r.loss = shoelace_power(r.b, h, f).p_hyst * synthetic_loss_factor(f, t, o);
    if (o.with_h) r.h = std::move(h);
    records.push_back(std::move(r));
  }
  return MaterialDataset(material_id, std::move(records));
}

}  // namespace hardcore
