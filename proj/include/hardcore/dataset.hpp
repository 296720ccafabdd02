// SPDX-License-Identifier: Apache-2.0
/**
 * @file   dataset.hpp
 * @brief  Per-material measurement records, scaling limits and fold splits.
 *
 * A material directory holds five header-less CSV files whose i-th rows
 * together form record i:
 *
 *   B_waveform.csv          1024 flux-density samples (T)
 *   H_waveform.csv          1024 field-strength samples (A/m), optional
 *   Frequency.csv           one value (Hz)
 *   Temperature.csv         one value (degC)
 *   Volumetric_losses.csv   one value (W/m^3), optional
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace hardcore {

inline constexpr std::size_t kSequenceLength = 1024;

struct WaveformRecord {
  std::vector<double> b;
  std::optional<std::vector<double>> h;
  double frequency = 0.0;
  double temperature = 0.0;
  std::optional<double> loss;
  std::string record_id;

  bool trainable() const { return h.has_value() && loss.has_value(); }
};

/// Throws std::invalid_argument describing the first violated record invariant.
void validate_record(const WaveformRecord& record);

struct Limits {
  double b_lim = 0.0;
  double h_lim = 0.0;  // 0 when no record carries h
};

/// Maxima of |b| and |h| over all samples of all records. Throws on an empty set.
Limits compute_limits(std::span<const WaveformRecord> records);

/// Immutable collection of one material's records with its scaling limits.
class MaterialDataset {
 public:
  MaterialDataset(std::string material_id, std::vector<WaveformRecord> records);

  const std::string& material_id() const { return material_id_; }
  std::span<const WaveformRecord> records() const { return records_; }
  const WaveformRecord& operator[](std::size_t i) const { return records_[i]; }
  std::size_t size() const { return records_.size(); }
  double b_lim() const { return limits_.b_lim; }
  double h_lim() const { return limits_.h_lim; }
  bool has_h() const { return limits_.h_lim > 0.0; }

 private:
  std::string material_id_;
  std::vector<WaveformRecord> records_;
  Limits limits_;
};

/// Loads a material directory. The material id defaults to the directory name.
/// Throws DataError naming the file and row on malformed input.
MaterialDataset load_material(const std::filesystem::path& directory,
                              std::optional<std::string> material_id = std::nullopt);

/// Writes the dataset in the same layout load_material reads. Optional files
/// are only written when every record carries the corresponding field.
void write_material(const MaterialDataset& dataset, const std::filesystem::path& directory);

struct FoldSplit {
  int k = 0;
  /// fold index per record, aligned with the dataset's record order
  std::vector<int> assignments;
  std::vector<std::string> warnings;

  int fold_of(std::size_t record_index) const { return assignments.at(record_index); }
  std::vector<std::size_t> members(int fold) const;
  std::vector<std::size_t> complement(int fold) const;
};

/// Within each stratum, records are shuffled with a generator seeded by
/// `seed` and dealt round-robin to folds 0, 1, ..., k-1.
FoldSplit stratified_kfold(const MaterialDataset& dataset, int k, std::uint64_t seed,
                           std::span<const int> strata);
FoldSplit stratified_kfold(const MaterialDataset& dataset, int k, std::uint64_t seed,
                           const std::function<int(const WaveformRecord&)>& strata_fn);

/// Quartile (0..3) of ln f within the dataset, by rank.
std::vector<int> frequency_quartiles(const MaterialDataset& dataset);

/// Fisher-Yates shuffle with a portable index draw so that permutations are
/// identical across standard library implementations.
void seeded_shuffle(std::span<std::size_t> items, std::uint64_t seed);

}  // namespace hardcore
