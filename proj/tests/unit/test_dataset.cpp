// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <numbers>
#include <set>

#include "doctest.h"
#include "hardcore/dataset.hpp"
#include "hardcore/error.hpp"
#include "hardcore/synthetic.hpp"
#include "test_support.hpp"

using namespace hardcore;
using hardcore::testing::TempDir;

namespace {

WaveformRecord sine_record(double amp, double h_amp, double f, std::string id) {
  WaveformRecord r;
  r.b.resize(kSequenceLength);
  std::vector<double> h(kSequenceLength);
  for (std::size_t k = 0; k < kSequenceLength; ++k) {
    const double t = 2.0 * std::numbers::pi * static_cast<double>(k) / kSequenceLength;
    r.b[k] = amp * std::sin(t);
    h[k] = h_amp * std::sin(t + 0.2);
  }
  r.h = h;
  r.frequency = f;
  r.temperature = 25.0;
  r.loss = 1000.0;
  r.record_id = std::move(id);
  return r;
}

void write_rows(const std::filesystem::path& file, const std::vector<std::string>& rows) {
  std::ofstream out(file);
  for (const auto& r : rows) out << r << '\n';
}

std::string join_row(const std::vector<double>& v) {
  std::string s;
  char buf[64];
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", v[i]);
    if (i) s += ',';
    s += buf;
  }
  return s;
}

void write_toy_dir(const std::filesystem::path& dir, std::size_t n) {
  std::vector<std::string> b, h, f, t, p;
  for (std::size_t i = 0; i < n; ++i) {
    auto r = sine_record(0.1 * (i + 1), 30.0 * (i + 1), 1e5 * (i + 1), std::to_string(i));
    b.push_back(join_row(r.b));
    h.push_back(join_row(*r.h));
    f.push_back(std::to_string(r.frequency));
    t.push_back("25");
    p.push_back("1.5e3");
  }
  write_rows(dir / "B_waveform.csv", b);
  write_rows(dir / "H_waveform.csv", h);
  write_rows(dir / "Frequency.csv", f);
  write_rows(dir / "Temperature.csv", t);
  write_rows(dir / "Volumetric_losses.csv", p);
}

}  // namespace

TEST_CASE("load_material parses a 3-row directory") {
  TempDir tmp("load3");
  write_toy_dir(tmp.path(), 3);
  const auto ds = load_material(tmp.path(), "toy");
  CHECK(ds.size() == 3);
  CHECK(ds.material_id() == "toy");
  CHECK(ds[1].frequency == doctest::Approx(2e5));
  CHECK(ds[2].loss.value() == doctest::Approx(1500.0));
  CHECK(ds.b_lim() == doctest::Approx(0.3).epsilon(1e-9));
  CHECK(ds.has_h());
  CHECK(ds[0].record_id == "0");
  // default id is the directory name
  CHECK(load_material(tmp.path()).material_id() == tmp.path().filename().string());
}

TEST_CASE("load_material reports malformed rows by file and row") {
  TempDir tmp("bad");
  write_toy_dir(tmp.path(), 3);
  {
    std::vector<double> shortrow(1023, 0.01);
    std::ifstream in(tmp.path() / "B_waveform.csv");
    std::vector<std::string> rows;
    for (std::string line; std::getline(in, line);) rows.push_back(line);
    rows[1] = join_row(shortrow);
    write_rows(tmp.path() / "B_waveform.csv", rows);
  }
  try {
    load_material(tmp.path());
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("B_waveform.csv") != std::string::npos);
    CHECK(msg.find("row 1") != std::string::npos);
  }
}

TEST_CASE("load_material rejects row-count mismatch, non-finite and non-positive frequency") {
  {
    TempDir tmp("count");
    write_toy_dir(tmp.path(), 3);
    write_rows(tmp.path() / "Frequency.csv", {"1e5", "2e5"});
    CHECK_THROWS_AS(load_material(tmp.path()), DataError);
  }
  {
    TempDir tmp("freq");
    write_toy_dir(tmp.path(), 2);
    write_rows(tmp.path() / "Frequency.csv", {"1e5", "-2"});
    CHECK_THROWS_AS(load_material(tmp.path()), DataError);
  }
  {
    TempDir tmp("nan");
    write_toy_dir(tmp.path(), 2);
    write_rows(tmp.path() / "Temperature.csv", {"25", "nan"});
    CHECK_THROWS_AS(load_material(tmp.path()), DataError);
  }
  {
    TempDir tmp("missing");
    write_toy_dir(tmp.path(), 2);
    std::filesystem::remove(tmp.path() / "B_waveform.csv");
    CHECK_THROWS_AS(load_material(tmp.path()), DataError);
  }
}

TEST_CASE("optional h and p files") {
  TempDir tmp("optional");
  write_toy_dir(tmp.path(), 2);
  std::filesystem::remove(tmp.path() / "H_waveform.csv");
  std::filesystem::remove(tmp.path() / "Volumetric_losses.csv");
  const auto ds = load_material(tmp.path());
  CHECK(ds.size() == 2);
  CHECK_FALSE(ds.has_h());
  CHECK_FALSE(ds[0].trainable());
}

TEST_CASE("reload is identical and write_material round-trips") {
  SyntheticOptions o;
  o.records = 7;
  const auto ds = make_synthetic_dataset(o, "syn");
  TempDir tmp("roundtrip");
  write_material(ds, tmp.path());
  const auto a = load_material(tmp.path(), "syn");
  const auto b = load_material(tmp.path(), "syn");
  REQUIRE(a.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(a[i].b == ds[i].b);
    CHECK(*a[i].h == *ds[i].h);
    CHECK(a[i].frequency == ds[i].frequency);
    CHECK(*a[i].loss == *ds[i].loss);
    CHECK(a[i].b == b[i].b);
  }
  CHECK(a.b_lim() == b.b_lim());
  CHECK(a.h_lim() == ds.h_lim());
}

TEST_CASE("compute_limits oracles") {
  auto r1 = sine_record(0.1, 30.0, 1e5, "a");
  r1.b[256] = 0.1;  // sin peak lands exactly here already; make it explicit
  std::vector<WaveformRecord> one{r1};
  CHECK(compute_limits(one).b_lim == doctest::Approx(0.1).epsilon(1e-15));
  auto r2 = sine_record(0.05, 50.0, 1e5, "b");
  (*r1.h)[10] = 30.0;
  (*r2.h)[10] = 50.0;
  std::vector<WaveformRecord> two{r1, r2};
  CHECK(compute_limits(two).h_lim == 50.0);
  CHECK_THROWS_AS(compute_limits(std::span<const WaveformRecord>{}), std::invalid_argument);

  SyntheticOptions o;
  o.records = 100;
  o.seed = 5;
  const auto ds = make_synthetic_dataset(o);
  double bmax = 0.0, hmax = 0.0;
  for (const auto& r : ds.records())
    for (std::size_t k = 0; k < kSequenceLength; ++k) {
      bmax = std::max(bmax, std::abs(r.b[k]));
      hmax = std::max(hmax, std::abs((*r.h)[k]));
    }
  CHECK(ds.b_lim() == bmax);
  CHECK(ds.h_lim() == hmax);
  std::vector<WaveformRecord> rev(ds.records().rbegin(), ds.records().rend());
  CHECK(compute_limits(rev).b_lim == bmax);
}

TEST_CASE("stratified_kfold oracles") {
  SyntheticOptions o;
  o.records = 16;
  const auto ds = make_synthetic_dataset(o);

  std::vector<int> one_stratum(8, 0);
  SyntheticOptions o8;
  o8.records = 8;
  const auto ds8 = make_synthetic_dataset(o8);
  const auto split8 = stratified_kfold(ds8, 4, 3, one_stratum);
  for (int f = 0; f < 4; ++f) CHECK(split8.members(f).size() == 2);
  CHECK(split8.warnings.empty());

  std::vector<int> strata(16);
  for (std::size_t i = 0; i < 16; ++i) strata[i] = i < 6 ? 0 : 1;
  const auto s1 = stratified_kfold(ds, 4, 42, strata);
  const auto s2 = stratified_kfold(ds, 4, 42, strata);
  CHECK(s1.assignments == s2.assignments);
  std::map<int, std::vector<int>> counts{{0, std::vector<int>(4, 0)}, {1, std::vector<int>(4, 0)}};
  for (std::size_t i = 0; i < 16; ++i) counts[strata[i]][s1.fold_of(i)]++;
  CHECK(counts[0] == std::vector<int>{2, 2, 1, 1});
  CHECK(counts[1] == std::vector<int>{3, 3, 2, 2});

  // disjoint cover
  std::set<std::size_t> seen;
  for (int f = 0; f < 4; ++f)
    for (auto i : s1.members(f)) CHECK(seen.insert(i).second);
  CHECK(seen.size() == 16);
  CHECK(s1.complement(0).size() + s1.members(0).size() == 16);

  std::vector<int> tiny(16, 1);
  tiny[0] = 7;
  CHECK_FALSE(stratified_kfold(ds, 4, 1, tiny).warnings.empty());
  CHECK_THROWS_AS(stratified_kfold(ds, 1, 1, strata), std::invalid_argument);
  CHECK_THROWS_AS(stratified_kfold(ds, 4, 1, std::vector<int>(3, 0)), std::invalid_argument);
}

TEST_CASE("seeded_shuffle is a deterministic permutation") {
  std::vector<std::size_t> a(50), b(50);
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), 0);
  seeded_shuffle(a, 9);
  seeded_shuffle(b, 9);
  CHECK(a == b);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 50; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("validate_record invariants") {
  auto r = sine_record(0.1, 10, 1e5, "x");
  CHECK_NOTHROW(validate_record(r));
  auto bad = r;
  bad.b.pop_back();
  CHECK_THROWS_AS(validate_record(bad), std::invalid_argument);
  bad = r;
  bad.loss = 0.0;
  CHECK_THROWS_AS(validate_record(bad), std::invalid_argument);
  bad = r;
  bad.b[3] = std::nan("");
  CHECK_THROWS_AS(validate_record(bad), std::invalid_argument);
}
