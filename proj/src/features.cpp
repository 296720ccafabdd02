// SPDX-License-Identifier: Apache-2.0
#include "hardcore/features.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace hardcore {

namespace {

double max_abs(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}

void require_length(std::span<const double> x, const char* op) {
  if (x.size() != kSequenceLength)
    throw std::invalid_argument(std::string(op) + ": expected 1024 samples, got " + std::to_string(x.size()));
}

// X_n = sum_k x_k exp(-2 pi i n k / M)
std::complex<double> dft_bin(std::span<const double> x, std::size_t n) {
  const std::size_t m = x.size();
  std::complex<double> acc{0.0, 0.0};
  for (std::size_t k = 0; k < m; ++k) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>((n * k) % m) / static_cast<double>(m);
    acc += x[k] * std::complex<double>(std::cos(angle), std::sin(angle));
  }
  return acc;
}

}  // namespace

std::string to_string(WaveformClass c) {
  switch (c) {
    case WaveformClass::sine: return "sine";
    case WaveformClass::triangular: return "triangular";
    case WaveformClass::trapezoidal: return "trapezoidal";
    case WaveformClass::other: return "other";
  }
  return "other";
}

WaveformClass waveform_class_from_string(const std::string& s) {
  if (s == "sine") return WaveformClass::sine;
  if (s == "triangular") return WaveformClass::triangular;
  if (s == "trapezoidal") return WaveformClass::trapezoidal;
  if (s == "other") return WaveformClass::other;
  throw std::invalid_argument("unknown waveform class '" + s + "'");
}

// ---------------------------------------------------------------------------
// classification

WaveformShape analyze_waveform(std::span<const double> b, const ClassifierThresholds& thresholds) {
  if (b.size() < 16) throw std::invalid_argument("analyze_waveform: sequence too short");
  const std::size_t m = b.size();
  const double mean = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(m);
  std::vector<double> x(m);
  for (std::size_t k = 0; k < m; ++k) x[k] = b[k] - mean;

  double sq = 0.0, abs_sum = 0.0, peak = 0.0;
  for (double v : x) {
    sq += v * v;
    abs_sum += std::abs(v);
    peak = std::max(peak, std::abs(v));
  }
  if (!(peak > 0.0) || sq == 0.0)
    throw std::invalid_argument("classify_waveform: constant sequence");

  WaveformShape shape;
  const double rms = std::sqrt(sq / static_cast<double>(m));
  shape.crest_factor = peak / rms;
  shape.form_factor = rms / (abs_sum / static_cast<double>(m));

  std::array<std::complex<double>, 9> bins{};
  for (std::size_t n = 1; n <= 8; ++n) bins[n] = dft_bin(x, n);
  // Parseval: sum over all bins of |X|^2 = M * sum x^2; X_1 and X_{M-1} carry equal energy.
  shape.fundamental_energy_fraction = 2.0 * std::norm(bins[1]) / (static_cast<double>(m) * sq);
  const double a1 = std::abs(bins[1]);
  if (a1 > 0.0) {
    const std::complex<double> c1 = std::conj(bins[1]) / a1;
    for (std::size_t n = 1; n <= 8; ++n) {
      // rotate harmonic n into the fundamental's phase frame, invariant to circular shift
      const std::complex<double> aligned = bins[n] * std::pow(c1, static_cast<int>(n));
      shape.harmonic_ratios[n - 1] = aligned.real() / a1;
    }
  }

  std::vector<double> d2(m);
  double d2_max = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    d2[k] = b[(k + 1) % m] - 2.0 * b[k] + b[(k + m - 1) % m];
    d2_max = std::max(d2_max, std::abs(d2[k]));
  }
  std::vector<char> active(m);
  std::size_t quiet = 0;
  for (std::size_t k = 0; k < m; ++k) {
    active[k] = std::abs(d2[k]) >= thresholds.trapezoid_quiet_level * d2_max;
    quiet += !active[k];
  }
  shape.quiet_fraction = static_cast<double>(quiet) / static_cast<double>(m);
  int bursts = 0;
  for (std::size_t k = 0; k < m; ++k)
    if (active[k] && !active[(k + m - 1) % m]) ++bursts;
  if (bursts == 0 && quiet == 0) bursts = 1;
  shape.bursts = bursts;
  return shape;
}

WaveformClass classify_waveform(std::span<const double> b, const ClassifierThresholds& t) {
  const WaveformShape s = analyze_waveform(b, t);
  if (s.fundamental_energy_fraction >= t.sine_energy_fraction &&
      std::abs(s.crest_factor - std::numbers::sqrt2) < t.sine_crest_tolerance)
    return WaveformClass::sine;

  if (std::abs(s.crest_factor - std::sqrt(3.0)) < t.triangle_crest_tolerance) {
    // A symmetric triangle has aligned ratios of exactly +1/n^2 at odd n and none at even n.
    bool pattern = true;
    for (std::size_t n = 2; n <= 8; ++n) {
      const double expected = (n % 2 == 1) ? 1.0 / static_cast<double>(n * n) : 0.0;
      const double tol = t.triangle_harmonic_tolerance / static_cast<double>(n * n);
      if (std::abs(s.harmonic_ratios[n - 1] - expected) > tol) pattern = false;
    }
    if (pattern) return WaveformClass::triangular;
  }

  if (s.quiet_fraction >= t.trapezoid_quiet_fraction && s.bursts <= t.trapezoid_max_bursts)
    return WaveformClass::trapezoidal;
  return WaveformClass::other;
}

// ---------------------------------------------------------------------------
// series features

ProfileNormalized per_profile_normalize(std::span<const double> b, const std::vector<double>* h,
                                        double b_lim, double h_lim) {
  if (!(b_lim > 0.0) || !(h_lim > 0.0))
    throw std::invalid_argument("per_profile_normalize: b_lim and h_lim must be positive");
  const double scale = max_abs(b);
  if (!(scale > 0.0)) throw std::invalid_argument("per_profile_normalize: degenerate all-zero b profile");
  ProfileNormalized out;
  out.profile_scale = scale;
  out.b_n.resize(b.size());
  for (std::size_t k = 0; k < b.size(); ++k) out.b_n[k] = b[k] / scale;
  if (h) {
    if (h->size() != b.size()) throw std::invalid_argument("per_profile_normalize: b and h lengths differ");
    const double factor = b_lim / (h_lim * scale);
    std::vector<double> hn(h->size());
    for (std::size_t k = 0; k < hn.size(); ++k) hn[k] = (*h)[k] * factor;
    out.h_n = std::move(hn);
  }
  return out;
}

Derivatives circular_derivatives(std::span<const double> x) {
  require_length(x, "circular_derivatives");
  const std::size_t m = x.size();
  Derivatives d;
  d.d1.resize(m);
  d.d2.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    const double next = x[(k + 1) % m];
    const double prev = x[(k + m - 1) % m];
    d.d1[k] = (next - prev) / 2.0;
    d.d2[k] = next - 2.0 * x[k] + prev;
  }
  return d;
}

Derivatives normalize_derivatives(const Derivatives& raw, double d1_lim, double d2_lim) {
  if (!(d1_lim > 0.0) || !(d2_lim > 0.0))
    throw std::invalid_argument("normalize_derivatives: limits must be positive");
  Derivatives d;
  d.d1.resize(raw.d1.size());
  d.d2.resize(raw.d2.size());
  for (std::size_t k = 0; k < raw.d1.size(); ++k) d.d1[k] = raw.d1[k] / d1_lim;
  for (std::size_t k = 0; k < raw.d2.size(); ++k) d.d2[k] = raw.d2[k] / d2_lim;
  return d;
}

std::vector<double> tan_tan(std::span<const double> b_n) {
  std::vector<double> out(b_n.size());
  for (std::size_t k = 0; k < b_n.size(); ++k) {
    if (!(std::abs(b_n[k]) <= 1.0)) throw std::invalid_argument("tan_tan: input outside [-1, 1]");
    out[k] = std::tan(0.9 * std::tan(b_n[k]));
  }
  return out;
}

double peak_to_peak(std::span<const double> b) {
  const auto [lo, hi] = std::minmax_element(b.begin(), b.end());
  return *hi - *lo;
}

double mean_abs_dbdt(std::span<const double> b, double frequency) {
  const std::size_t m = b.size();
  double acc = 0.0;
  for (std::size_t k = 0; k < m; ++k) acc += std::abs(b[(k + 1) % m] - b[(k + m - 1) % m]) / 2.0;
  return acc / static_cast<double>(m) * frequency * static_cast<double>(m);
}

// ---------------------------------------------------------------------------
// norms and scalars

void FeatureNorms::validate() const {
  const std::pair<const char*, double> positive[] = {
      {"b_lim", b_lim},         {"h_lim", h_lim},
      {"d1_lim", d1_lim},       {"d2_lim", d2_lim},
      {"inv_f_max", inv_f_max}, {"delta_b_max", delta_b_max},
      {"mean_abs_dbdt_max", mean_abs_dbdt_max}};
  for (const auto& [name, v] : positive)
    if (!(v > 0.0) || !std::isfinite(v))
      throw std::invalid_argument(std::string("feature norm ") + name + " must be positive and finite");
  if (!std::isfinite(ln_delta_b_max) || !std::isfinite(ln_mean_abs_dbdt_max))
    throw std::invalid_argument("feature norms: log maxima must be finite");
}

FeatureNorms compute_norms(std::span<const WaveformRecord> records, const ClassifierThresholds& thresholds) {
  const Limits lim = compute_limits(records);
  FeatureNorms n;
  n.thresholds = thresholds;
  n.b_lim = lim.b_lim;
  n.h_lim = lim.h_lim;
  if (!(n.h_lim > 0.0)) throw std::invalid_argument("compute_norms: records carry no h sequences");
  n.ln_delta_b_max = -std::numeric_limits<double>::infinity();
  n.ln_mean_abs_dbdt_max = -std::numeric_limits<double>::infinity();
  for (const auto& r : records) {
    const ProfileNormalized pn = per_profile_normalize(r.b, nullptr, n.b_lim, n.h_lim);
    const Derivatives d = circular_derivatives(pn.b_n);
    n.d1_lim = std::max(n.d1_lim, max_abs(d.d1));
    n.d2_lim = std::max(n.d2_lim, max_abs(d.d2));
    n.inv_f_max = std::max(n.inv_f_max, 1.0 / r.frequency);
    const double db = peak_to_peak(r.b);
    const double dbdt = mean_abs_dbdt(r.b, r.frequency);
    if (!(db > 0.0)) throw std::invalid_argument("compute_norms: record " + r.record_id + " has zero peak-to-peak");
    n.delta_b_max = std::max(n.delta_b_max, db);
    n.mean_abs_dbdt_max = std::max(n.mean_abs_dbdt_max, dbdt);
    n.ln_delta_b_max = std::max(n.ln_delta_b_max, std::log(db));
    n.ln_mean_abs_dbdt_max = std::max(n.ln_mean_abs_dbdt_max, std::log(dbdt));
  }
  n.validate();
  return n;
}

FeatureNorms compute_norms(const MaterialDataset& dataset, std::span<const std::size_t> indices,
                           const ClassifierThresholds& thresholds) {
  std::vector<WaveformRecord> subset;
  subset.reserve(indices.size());
  for (std::size_t i : indices) subset.push_back(dataset[i]);
  return compute_norms(subset, thresholds);
}

std::array<double, kScalarFeatures> scalar_features(std::span<const double> b, double frequency,
                                                    double temperature, WaveformClass waveform,
                                                    const FeatureNorms& norms) {
  if (!(frequency > 0.0)) throw std::invalid_argument("scalar_features: frequency must be positive");
  const double db = peak_to_peak(b);
  if (!(db > 0.0)) throw std::invalid_argument("scalar_features: peak-to-peak flux must be positive");
  const double dbdt = mean_abs_dbdt(b, frequency);

  std::array<double, kScalarFeatures> s{};
  s[0] = temperature / kTemperatureScale;
  s[1] = (1.0 / frequency) / norms.inv_f_max;
  s[2] = std::log(frequency / kFrequencyScale);
  s[3] = db / norms.delta_b_max;
  s[4] = std::log(db) - norms.ln_delta_b_max;
  s[5] = dbdt / norms.mean_abs_dbdt_max;
  s[6] = std::log(dbdt) - norms.ln_mean_abs_dbdt_max;
  s[7 + static_cast<std::size_t>(waveform)] = 1.0;
  return s;
}

FeatureBundle build_features(const WaveformRecord& record, const FeatureNorms& norms) {
  require_length(record.b, "build_features");
  const ProfileNormalized pn =
      per_profile_normalize(record.b, record.h ? &*record.h : nullptr, norms.b_lim, norms.h_lim);
  const Derivatives d = normalize_derivatives(circular_derivatives(pn.b_n), norms.d1_lim, norms.d2_lim);
  const std::vector<double> ttb = tan_tan(pn.b_n);

  FeatureBundle fb;
  fb.series.resize(kSeriesChannels * kSequenceLength);
  auto channel = [&](std::size_t c) { return fb.series.begin() + static_cast<std::ptrdiff_t>(c * kSequenceLength); };
  std::transform(record.b.begin(), record.b.end(), channel(0), [&](double v) { return v / norms.b_lim; });
  std::copy(pn.b_n.begin(), pn.b_n.end(), channel(1));
  std::copy(d.d1.begin(), d.d1.end(), channel(2));
  std::copy(d.d2.begin(), d.d2.end(), channel(3));
  std::copy(ttb.begin(), ttb.end(), channel(4));

  fb.waveform = classify_waveform(record.b, norms.thresholds);
  fb.scalars = scalar_features(record.b, record.frequency, record.temperature, fb.waveform, norms);
  fb.profile_scale = pn.profile_scale;
  fb.h_n_target = pn.h_n;
  return fb;
}

}  // namespace hardcore
