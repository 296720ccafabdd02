// SPDX-License-Identifier: Apache-2.0
#include "hardcore/magloss.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

#include "hardcore/error.hpp"

namespace hardcore {

double exact_sum(std::span<const double> values) {
  // Shewchuk's non-overlapping partials with the final correctly rounded
  // combination step (as in Python's math.fsum).
  std::vector<double> partials;
  for (double x : values) {
    if (!std::isfinite(x)) return std::accumulate(values.begin(), values.end(), 0.0);
    std::size_t i = 0;
    for (double y : partials) {
      if (std::abs(x) < std::abs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials[i++] = lo;
      x = hi;
    }
    partials.resize(i);
    partials.push_back(x);
  }
  if (partials.empty()) return 0.0;
  std::size_t n = partials.size();
  double hi = partials[--n], lo = 0.0;
  while (n > 0) {
    const double x = hi;
    const double y = partials[--n];
    hi = x + y;
    const double yr = hi - x;
    lo = y - yr;
    if (lo != 0.0) break;
  }
  if (n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0))) {
    const double y = lo * 2.0;
    const double x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

LoopLoss shoelace_power(std::span<const double> b, std::span<const double> h, double frequency) {
  if (b.size() != h.size())
    throw std::invalid_argument("shoelace_power: b has " + std::to_string(b.size()) + " samples, h has " +
                                std::to_string(h.size()));
  const std::size_t m = b.size();
  if (m < 3) throw std::invalid_argument("shoelace_power: need at least 3 vertices");
  if (!(frequency > 0.0)) throw std::invalid_argument("shoelace_power: frequency must be positive");
  std::vector<double> terms(m);
  terms[0] = b[0] * (h[m - 1] - h[1]);
  for (std::size_t i = 1; i + 1 < m; ++i) terms[i] = b[i] * (h[i - 1] - h[i + 1]);
  terms[m - 1] = b[m - 1] * (h[m - 2] - h[0]);
  LoopLoss out;
  out.area = 0.5 * exact_sum(terms);
  out.p_hyst = frequency * out.area;
  out.orientation = (out.area > 0.0) - (out.area < 0.0);
  return out;
}

std::vector<HistogramBin> histogram(std::span<const double> values, std::size_t bins) {
  if (values.empty()) return {};
  if (bins == 0) throw std::invalid_argument("histogram: need at least one bin");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  // a spread at rounding level is reported as one bin
  if (hi - lo <= 1e-12 * std::max({1.0, std::abs(lo), std::abs(hi)})) return {HistogramBin{lo, hi, values.size()}};
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<HistogramBin> out(bins);
  for (std::size_t i = 0; i < bins; ++i) {
    out[i].left = lo + width * static_cast<double>(i);
    out[i].right = (i + 1 == bins) ? hi : lo + width * static_cast<double>(i + 1);
  }
  for (double v : values) {
    auto idx = static_cast<std::size_t>((v - lo) / width);
    out[std::min(idx, bins - 1)].count++;
  }
  return out;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile: empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile: q outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

AreaErrorStats area_error_stats(const MaterialDataset& dataset, std::size_t bins) {
  AreaErrorStats s;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& r = dataset[i];
    if (!r.h || !r.loss) {
      ++s.skipped;
      continue;
    }
    const LoopLoss loop = shoelace_power(r.b, *r.h, r.frequency);
    if (loop.area < 0.0) s.negative_area_records.push_back(r.record_id);
    s.record_indices.push_back(i);
    s.relative_errors.push_back((loop.p_hyst - *r.loss) / *r.loss);
  }
  if (s.relative_errors.empty()) return s;
  const auto& e = s.relative_errors;
  s.bins = histogram(e, bins);
  s.min = *std::min_element(e.begin(), e.end());
  s.max = *std::max_element(e.begin(), e.end());
  s.mean = std::accumulate(e.begin(), e.end(), 0.0) / static_cast<double>(e.size());
  for (double q : {0.05, 0.25, 0.5, 0.75, 0.95}) s.quantiles.emplace_back(q, quantile(e, q));
  return s;
}

void write_area_error_report(const AreaErrorStats& stats, const std::filesystem::path& directory,
                             const std::string& stem) {
  std::filesystem::create_directories(directory);
  {
    std::ofstream csv(directory / (stem + ".csv"));
    if (!csv) throw DataError("cannot write " + (directory / (stem + ".csv")).string());
    csv.precision(17);
    csv << "bin_left,bin_right,count\n";
    for (const auto& b : stats.bins) csv << b.left << ',' << b.right << ',' << b.count << '\n';
  }
  nlohmann::json j;
  j["n_records"] = stats.relative_errors.size();
  j["skipped"] = stats.skipped;
  j["min"] = stats.min;
  j["max"] = stats.max;
  j["mean"] = stats.mean;
  j["quantiles"] = nlohmann::json::object();
  for (const auto& [q, v] : stats.quantiles) j["quantiles"][std::to_string(q).substr(0, 4)] = v;
  j["negative_area_records"] = stats.negative_area_records;
  std::ofstream js(directory / (stem + ".json"));
  if (!js) throw DataError("cannot write " + (directory / (stem + ".json")).string());
  js << j.dump(2) << '\n';
}

}  // namespace hardcore
