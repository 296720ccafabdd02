// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

namespace hardcore::testing {

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

inline double rel_diff(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("hardcore_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Direct evaluation of the circular dilated cross-correlation.
inline std::vector<double> brute_conv(const std::vector<double>& x, const std::vector<double>& w,
                                      const std::vector<double>& bias, std::size_t batch, std::size_t cin,
                                      std::size_t cout, std::size_t m, std::size_t kernel, std::size_t dilation) {
  std::vector<double> out(batch * cout * m, 0.0);
  const long long c = static_cast<long long>(kernel - 1) / 2;
  const long long mm = static_cast<long long>(m);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t k = 0; k < m; ++k) {
        double acc = bias[o];
        for (std::size_t p = 0; p < cin; ++p)
          for (std::size_t j = 0; j < kernel; ++j) {
            long long idx = (static_cast<long long>(k) + (static_cast<long long>(j) - c) *
                                                             static_cast<long long>(dilation)) % mm;
            if (idx < 0) idx += mm;
            acc += w[(o * cin + p) * kernel + j] * x[(b * cin + p) * m + static_cast<std::size_t>(idx)];
          }
        out[(b * cout + o) * m + k] = acc;
      }
  return out;
}

}  // namespace hardcore::testing
