// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hardcore/dataset.hpp"

namespace hardcore {

struct LoopLoss {
  double area = 0.0;    // T * A/m, signed
  double p_hyst = 0.0;  // W/m^3
  int orientation = 0;  // sign of area
};

/// Correctly rounded sum of finite values, independent of their order.
double exact_sum(std::span<const double> values);

/// Shoelace area of the closed bh polygon with circular indexing,
///   area = 1/2 sum_i b_i (h_{i-1} - h_{i+1}),   p_hyst = f * area.
/// The area is positive for a counterclockwise loop in the h-b plane (h on
/// the horizontal axis), the direction a lossy core traverses.
/// The sum is translation invariant, so no offset into the first quadrant is
/// applied. Terms are summed exactly, so reversing or rotating the traversal
/// negates or preserves the area bit for bit.
LoopLoss shoelace_power(std::span<const double> b, std::span<const double> h, double frequency);

struct HistogramBin {
  double left = 0.0;
  double right = 0.0;
  std::size_t count = 0;
};

/// Equal-width bins spanning [min, max] of the values. A spread below 1e-12
/// relative yields a single bin.
std::vector<HistogramBin> histogram(std::span<const double> values, std::size_t bins);

/// Linear interpolation between order statistics (position q * (n - 1)).
double quantile(std::vector<double> values, double q);

struct AreaErrorStats {
  std::vector<std::size_t> record_indices;
  std::vector<double> relative_errors;  // (p_hyst - p) / p
  std::vector<HistogramBin> bins;
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  std::vector<std::pair<double, double>> quantiles;  // (q, value)
  std::size_t skipped = 0;
  std::vector<std::string> negative_area_records;
};

/// Signed discrepancy between the loop-area loss and the measured loss for
/// every record that carries both h and p.
AreaErrorStats area_error_stats(const MaterialDataset& dataset, std::size_t bins = 40);

/// Writes `<stem>.csv` (bin_left,bin_right,count) and `<stem>.json` (summary).
void write_area_error_report(const AreaErrorStats& stats, const std::filesystem::path& directory,
                             const std::string& stem = "bh_area_error");

}  // namespace hardcore
