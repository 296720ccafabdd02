// SPDX-License-Identifier: Apache-2.0
#include "hardcore/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

#include "hardcore/error.hpp"

namespace hardcore {

namespace fs = std::filesystem;

namespace {

constexpr const char* kBFile = "B_waveform.csv";
constexpr const char* kHFile = "H_waveform.csv";
constexpr const char* kFreqFile = "Frequency.csv";
constexpr const char* kTempFile = "Temperature.csv";
constexpr const char* kLossFile = "Volumetric_losses.csv";

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

using Rows = std::vector<std::vector<double>>;

Rows read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  Rows rows;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<double> values;
    std::size_t col = 0;
    std::string_view rest = line;
    while (true) {
      const auto comma = rest.find(',');
      const std::string cell = trim(rest.substr(0, comma));
      double v = 0.0;
      const auto* begin = cell.data();
      const auto* end = cell.data() + cell.size();
      auto [ptr, ec] = std::from_chars(begin, end, v);
      if (cell.empty() || ec != std::errc() || ptr != end)
        throw DataError(path.filename().string() + ": row " + std::to_string(row) + ", column " +
                        std::to_string(col) + ": cannot parse '" + cell + "' as a number");
      if (!std::isfinite(v))
        throw DataError(path.filename().string() + ": row " + std::to_string(row) + ", column " +
                        std::to_string(col) + ": non-finite value");
      values.push_back(v);
      ++col;
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    rows.push_back(std::move(values));
    ++row;
  }
  return rows;
}

void check_width(const Rows& rows, std::size_t width, const char* file) {
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i].size() != width)
      throw DataError(std::string(file) + ": row " + std::to_string(i) + " has " +
                      std::to_string(rows[i].size()) + " values, expected " + std::to_string(width));
}

void check_rows(const Rows& rows, std::size_t expected, const char* file) {
  if (rows.size() != expected)
    throw DataError(std::string(file) + " has " + std::to_string(rows.size()) + " rows but " +
                    kBFile + " has " + std::to_string(expected));
}

void write_rows(const fs::path& path, std::size_t n,
                const std::function<void(std::ostream&, std::size_t)>& write_row) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t i = 0; i < n; ++i) {
    write_row(out, i);
    out << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

void write_number(std::ostream& os, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  os << buf;
}

}  // namespace

void validate_record(const WaveformRecord& record) {
  const std::string id = "record " + record.record_id;
  if (record.b.size() != kSequenceLength)
    throw std::invalid_argument(id + ": b has " + std::to_string(record.b.size()) + " samples, expected 1024");
  if (record.h && record.h->size() != kSequenceLength)
    throw std::invalid_argument(id + ": h has " + std::to_string(record.h->size()) + " samples, expected 1024");
  if (!(record.frequency > 0.0) || !std::isfinite(record.frequency))
    throw std::invalid_argument(id + ": frequency must be positive and finite");
  if (!std::isfinite(record.temperature)) throw std::invalid_argument(id + ": temperature is not finite");
  if (record.loss && (!(*record.loss > 0.0) || !std::isfinite(*record.loss)))
    throw std::invalid_argument(id + ": loss must be positive and finite");
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  if (!finite(record.b) || (record.h && !finite(*record.h)))
    throw std::invalid_argument(id + ": non-finite sample");
}

Limits compute_limits(std::span<const WaveformRecord> records) {
  if (records.empty()) throw std::invalid_argument("compute_limits: empty dataset");
  Limits lim;
  for (const auto& r : records) {
    for (double v : r.b) lim.b_lim = std::max(lim.b_lim, std::abs(v));
    if (r.h)
      for (double v : *r.h) lim.h_lim = std::max(lim.h_lim, std::abs(v));
  }
  return lim;
}

MaterialDataset::MaterialDataset(std::string material_id, std::vector<WaveformRecord> records)
    : material_id_(std::move(material_id)), records_(std::move(records)) {
  for (const auto& r : records_) validate_record(r);
  limits_ = compute_limits(records_);
  if (!(limits_.b_lim > 0.0)) throw std::invalid_argument("MaterialDataset: all b samples are zero");
}

MaterialDataset load_material(const fs::path& directory, std::optional<std::string> material_id) {
  if (!fs::is_directory(directory)) throw DataError("not a directory: " + directory.string());
  auto require = [&](const char* name) {
    const fs::path p = directory / name;
    if (!fs::exists(p)) throw DataError("missing file " + p.string());
    return read_csv(p);
  };

  const Rows b = require(kBFile);
  check_width(b, kSequenceLength, kBFile);
  const Rows freq = require(kFreqFile);
  check_rows(freq, b.size(), kFreqFile);
  check_width(freq, 1, kFreqFile);
  const Rows temp = require(kTempFile);
  check_rows(temp, b.size(), kTempFile);
  check_width(temp, 1, kTempFile);

  std::optional<Rows> h, loss;
  if (fs::exists(directory / kHFile)) {
    h = read_csv(directory / kHFile);
    check_rows(*h, b.size(), kHFile);
    check_width(*h, kSequenceLength, kHFile);
  }
  if (fs::exists(directory / kLossFile)) {
    loss = read_csv(directory / kLossFile);
    check_rows(*loss, b.size(), kLossFile);
    check_width(*loss, 1, kLossFile);
  }

  std::vector<WaveformRecord> records;
  records.reserve(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    WaveformRecord r;
    r.record_id = std::to_string(i);
    r.b = b[i];
    if (h) r.h = (*h)[i];
    r.frequency = freq[i][0];
    r.temperature = temp[i][0];
    if (loss) r.loss = (*loss)[i][0];
    if (!(r.frequency > 0.0))
      throw DataError(std::string(kFreqFile) + ": row " + std::to_string(i) + ": frequency must be positive");
    if (r.loss && !(*r.loss > 0.0))
      throw DataError(std::string(kLossFile) + ": row " + std::to_string(i) + ": loss must be positive");
    records.push_back(std::move(r));
  }
  if (records.empty()) throw DataError(std::string(kBFile) + " has no rows");

  std::string id = material_id.value_or(fs::absolute(directory).lexically_normal().filename().string());
  if (id.empty()) id = fs::absolute(directory).lexically_normal().parent_path().filename().string();
  try {
    return MaterialDataset(std::move(id), std::move(records));
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
}

void write_material(const MaterialDataset& dataset, const fs::path& directory) {
  fs::create_directories(directory);
  const auto records = dataset.records();
  const std::size_t n = records.size();
  auto write_seq = [](std::ostream& os, const std::vector<double>& v) {
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (k) os << ',';
      write_number(os, v[k]);
    }
  };
  write_rows(directory / kBFile, n, [&](std::ostream& os, std::size_t i) { write_seq(os, records[i].b); });
  write_rows(directory / kFreqFile, n, [&](std::ostream& os, std::size_t i) { write_number(os, records[i].frequency); });
  write_rows(directory / kTempFile, n, [&](std::ostream& os, std::size_t i) { write_number(os, records[i].temperature); });
  const bool all_h = std::all_of(records.begin(), records.end(), [](const auto& r) { return r.h.has_value(); });
  const bool all_p = std::all_of(records.begin(), records.end(), [](const auto& r) { return r.loss.has_value(); });
  if (all_h)
    write_rows(directory / kHFile, n, [&](std::ostream& os, std::size_t i) { write_seq(os, *records[i].h); });
  if (all_p)
    write_rows(directory / kLossFile, n, [&](std::ostream& os, std::size_t i) { write_number(os, *records[i].loss); });
}

std::vector<std::size_t> FoldSplit::members(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignments.size(); ++i)
    if (assignments[i] == fold) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldSplit::complement(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignments.size(); ++i)
    if (assignments[i] != fold) out.push_back(i);
  return out;
}

void seeded_shuffle(std::span<std::size_t> items, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = items.size(); i > 1; --i) {
    // rejection sampling keeps the draw unbiased
    const std::uint64_t bound = i;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t r;
    do r = rng();
    while (r >= limit);
    std::swap(items[i - 1], items[r % bound]);
  }
}

FoldSplit stratified_kfold(const MaterialDataset& dataset, int k, std::uint64_t seed,
                           std::span<const int> strata) {
  if (k < 2) throw std::invalid_argument("stratified_kfold: k must be >= 2");
  if (strata.size() != dataset.size())
    throw std::invalid_argument("stratified_kfold: one stratum label per record required");

  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < strata.size(); ++i) groups[strata[i]].push_back(i);

  FoldSplit split;
  split.k = k;
  split.assignments.assign(dataset.size(), -1);
  std::uint64_t stratum_seed = seed;
  for (auto& [label, members] : groups) {
    if (members.size() < static_cast<std::size_t>(k))
      split.warnings.push_back("stratum " + std::to_string(label) + " has " + std::to_string(members.size()) +
                               " records, fewer than " + std::to_string(k) + " folds");
    // decorrelate strata while staying a pure function of (seed, label order)
    seeded_shuffle(members, stratum_seed);
    stratum_seed = stratum_seed * 6364136223846793005ULL + 1442695040888963407ULL;
    for (std::size_t j = 0; j < members.size(); ++j)
      split.assignments[members[j]] = static_cast<int>(j % static_cast<std::size_t>(k));
  }
  return split;
}

FoldSplit stratified_kfold(const MaterialDataset& dataset, int k, std::uint64_t seed,
                           const std::function<int(const WaveformRecord&)>& strata_fn) {
  std::vector<int> labels;
  labels.reserve(dataset.size());
  for (const auto& r : dataset.records()) labels.push_back(strata_fn(r));
  return stratified_kfold(dataset, k, seed, labels);
}

std::vector<int> frequency_quartiles(const MaterialDataset& dataset) {
  const std::size_t n = dataset.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dataset[a].frequency < dataset[b].frequency;
  });
  std::vector<int> q(n);
  for (std::size_t rank = 0; rank < n; ++rank) q[order[rank]] = static_cast<int>((4 * rank) / n);
  return q;
}

}  // namespace hardcore
