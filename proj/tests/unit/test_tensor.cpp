// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include "doctest.h"
#include "hardcore/tensor.hpp"
#include "test_support.hpp"

using namespace hardcore::tensor;
using hardcore::testing::brute_conv;
using hardcore::testing::random_values;
using hardcore::testing::rel_diff;

namespace {

// Central-difference derivative of a scalar-valued function of one leaf.
template <class F>
std::vector<double> numeric_grad(Tensor& leaf, F&& f, double step = 1e-6) {
  auto v = leaf.mutable_values();
  std::vector<double> g(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x0 = v[i];
    v[i] = x0 + step;
    const double up = f();
    v[i] = x0 - step;
    const double down = f();
    v[i] = x0;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

}  // namespace

TEST_CASE("shape basics") {
  Shape s{2, 3, 4};
  CHECK(s.size() == 24);
  CHECK(s.rank == 3);
  CHECK(s == Shape{2, 3, 4});
  CHECK_FALSE(s == Shape{2, 3});
  CHECK_THROWS_AS(Tensor::constant(Shape{2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST_CASE("backward of x^2 at 3 gives 6") {
  auto x = Tensor::parameter(Shape{1}, {3.0});
  auto y = sum(mul(x, x));
  y.backward();
  CHECK(y.item() == doctest::Approx(9.0));
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("backward requires a scalar output") {
  auto x = Tensor::parameter(Shape{2}, {1.0, 2.0});
  CHECK_THROWS_AS(mul(x, x).backward(), std::invalid_argument);
}

TEST_CASE("no-grad guard skips graph recording") {
  auto x = Tensor::parameter(Shape{1}, {2.0});
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    auto y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(grad_enabled());
}

TEST_CASE("conv1d_circular identity kernel reproduces input") {
  const auto xv = random_values(1 * 1 * 16, 3);
  auto x = Tensor::constant(Shape{1, 1, 16}, xv);
  auto v = Tensor::parameter(Shape{1, 1, 1}, {1.0});
  auto g = Tensor::parameter(Shape{1}, {1.0});
  auto b = Tensor::parameter(Shape{1}, {0.0});
  auto y = conv1d_circular(x, WeightNormedKernel{v, g, b}, 1);
  for (std::size_t k = 0; k < 16; ++k) CHECK(y.values()[k] == doctest::Approx(xv[k]).epsilon(1e-15));
}

TEST_CASE("conv1d_circular matches brute force on 2x3x8, kernel 3, dilation 2") {
  const auto xv = random_values(2 * 3 * 8, 11), wv = random_values(4 * 3 * 3, 12), bv = random_values(4, 13);
  auto y = conv1d_circular(Tensor::constant(Shape{2, 3, 8}, xv), Tensor::constant(Shape{4, 3, 3}, wv),
                           Tensor::constant(Shape{4}, bv), 2);
  const auto ref = brute_conv(xv, wv, bv, 2, 3, 4, 8, 3, 2);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y.values()[i] - ref[i]) < 1e-12);
}

TEST_CASE("conv1d_circular matches brute force over random small shapes") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t batch = 1 + rng() % 3, cin = 1 + rng() % 4, cout = 1 + rng() % 4;
    const std::size_t kernel = std::array<std::size_t, 3>{1, 3, 5}[rng() % 3];
    const std::size_t dilation = std::array<std::size_t, 3>{1, 2, 4}[rng() % 3];
    const std::size_t m = (kernel - 1) * dilation + 1 + rng() % 32;
    if (m > 32) continue;
    const auto xv = random_values(batch * cin * m, rng()), wv = random_values(cout * cin * kernel, rng()),
               bv = random_values(cout, rng());
    auto y = conv1d_circular(Tensor::constant(Shape{batch, cin, m}, xv),
                             Tensor::constant(Shape{cout, cin, kernel}, wv), Tensor::constant(Shape{cout}, bv),
                             dilation);
    const auto ref = brute_conv(xv, wv, bv, batch, cin, cout, m, kernel, dilation);
    double worst = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(y.values()[i] - ref[i]));
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("conv1d_circular long sequences exercise the blocked path") {
  const std::size_t batch = 2, cin = 5, cout = 12, m = 1024, kernel = 9, dilation = 4;
  const auto xv = random_values(batch * cin * m, 5), wv = random_values(cout * cin * kernel, 6),
             bv = random_values(cout, 7);
  auto y = conv1d_circular(Tensor::constant(Shape{batch, cin, m}, xv), Tensor::constant(Shape{cout, cin, kernel}, wv),
                           Tensor::constant(Shape{cout}, bv), dilation);
  const auto ref = brute_conv(xv, wv, bv, batch, cin, cout, m, kernel, dilation);
  double worst = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(y.values()[i] - ref[i]));
  CHECK(worst < 1e-12);
}

TEST_CASE("conv1d_circular is shift equivariant for every shift") {
  const std::size_t m = 24;
  const auto xv = random_values(2 * m, 21), wv = random_values(3 * 2 * 5, 22), bv = random_values(3, 23);
  auto w = Tensor::constant(Shape{3, 2, 5}, wv);
  auto b = Tensor::constant(Shape{3}, bv);
  const auto base = conv1d_circular(Tensor::constant(Shape{1, 2, m}, xv), w, b, 2);
  for (std::size_t s = 0; s < m; ++s) {
    std::vector<double> shifted(xv.size());
    for (std::size_t p = 0; p < 2; ++p)
      for (std::size_t k = 0; k < m; ++k) shifted[p * m + (k + s) % m] = xv[p * m + k];
    const auto y = conv1d_circular(Tensor::constant(Shape{1, 2, m}, shifted), w, b, 2);
    bool exact = true;
    for (std::size_t o = 0; o < 3; ++o)
      for (std::size_t k = 0; k < m; ++k) exact = exact && y.values()[o * m + (k + s) % m] == base.values()[o * m + k];
    CHECK(exact);
  }
}

TEST_CASE("conv1d_circular rejects invalid geometry") {
  auto x = Tensor::constant(Shape{1, 1, 8}, std::vector<double>(8, 1.0));
  auto b = Tensor::constant(Shape{1}, {0.0});
  CHECK_THROWS_AS(conv1d_circular(x, Tensor::constant(Shape{1, 1, 2}, {1.0, 1.0}), b, 1), std::invalid_argument);
  CHECK_THROWS_AS(conv1d_circular(x, Tensor::constant(Shape{1, 1, 3}, {1.0, 1.0, 1.0}), b, 4),
                  std::invalid_argument);
  CHECK_THROWS_AS(conv1d_circular(x, Tensor::constant(Shape{1, 2, 3}, std::vector<double>(6, 1.0)), b, 1),
                  std::invalid_argument);
}

TEST_CASE("conv1d_circular gradients match finite differences on 1x2x16") {
  const auto xv = random_values(2 * 16, 31);
  auto x = Tensor::parameter(Shape{1, 2, 16}, xv);
  auto v = Tensor::parameter(Shape{3, 2, 3}, random_values(18, 32));
  auto g = Tensor::parameter(Shape{3}, random_values(3, 33, 0.5, 1.5));
  auto b = Tensor::parameter(Shape{3}, random_values(3, 34));
  const auto weights = random_values(3 * 16, 35);
  auto objective = [&] {
    auto y = conv1d_circular(x, WeightNormedKernel{v, g, b}, 2);
    return sum(mul(tanh(y), Tensor::constant(Shape{1, 3, 16}, weights)));
  };
  auto out = objective();
  out.backward();
  auto fval = [&] {
    NoGradGuard guard;
    return objective().item();
  };
  for (Tensor* leaf : {&x, &v, &g, &b}) {
    const std::vector<double> analytic(leaf->grad().begin(), leaf->grad().end());
    const auto numeric = numeric_grad(*leaf, fval);
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      INFO("parameter entry " << i);
      CHECK((rel_diff(analytic[i], numeric[i]) < 1e-5 || std::abs(analytic[i] - numeric[i]) < 1e-9));
    }
  }
}

TEST_CASE("weight norm is invariant to positive scaling of the direction") {
  const auto dv = random_values(2 * 3 * 5, 41);
  auto gain = Tensor::constant(Shape{2}, {0.3, 1.7});
  const auto w1 = weight_norm(Tensor::constant(Shape{2, 3, 5}, dv), gain);
  auto scaled = dv;
  for (auto& x : scaled) x *= 37.5;
  const auto w2 = weight_norm(Tensor::constant(Shape{2, 3, 5}, scaled), gain);
  for (std::size_t i = 0; i < dv.size(); ++i) CHECK(rel_diff(w1.values()[i], w2.values()[i]) < 1e-12);
  // per-output norm equals the gain
  for (std::size_t o = 0; o < 2; ++o) {
    double n2 = 0.0;
    for (std::size_t i = 0; i < 15; ++i) n2 += w1.values()[o * 15 + i] * w1.values()[o * 15 + i];
    CHECK(std::sqrt(n2) == doctest::Approx(gain.values()[o]).epsilon(1e-14));
  }
  CHECK_THROWS_AS(weight_norm(Tensor::constant(Shape{1, 1, 2}, {0.0, 0.0}), Tensor::constant(Shape{1}, {1.0})),
                  std::invalid_argument);
}

TEST_CASE("linear layer oracles") {
  const auto xv = random_values(4 * 3, 51);
  auto x = Tensor::constant(Shape{4, 3}, xv);
  auto id = linear(x, Tensor::constant(Shape{3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}), Tensor::constant(Shape{3}, {0, 0, 0}));
  for (std::size_t i = 0; i < xv.size(); ++i) CHECK(id.values()[i] == xv[i]);
  auto constant = linear(x, Tensor::constant(Shape{2, 3}, std::vector<double>(6, 0.0)), Tensor::constant(Shape{2}, {2.5, -1}));
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(constant.values()[r * 2] == 2.5);
    CHECK(constant.values()[r * 2 + 1] == -1.0);
  }
  const auto wv = random_values(2 * 3, 52), bv = random_values(2, 53);
  auto y = linear(x, Tensor::constant(Shape{2, 3}, wv), Tensor::constant(Shape{2}, bv));
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t o = 0; o < 2; ++o) {
      double acc = bv[o];
      for (std::size_t i = 0; i < 3; ++i) acc += wv[o * 3 + i] * xv[r * 3 + i];
      CHECK(std::abs(y.values()[r * 2 + o] - acc) < 1e-14);
    }
  CHECK_THROWS_AS(linear(x, Tensor::constant(Shape{2, 4}, std::vector<double>(8, 0.0)), Tensor::constant(Shape{2}, {0, 0})),
                  std::invalid_argument);
}

TEST_CASE("tanh matches the math library") {
  CHECK(tanh_scalar(0.0) == 0.0);
  CHECK(std::abs(tanh_scalar(25.0) - 1.0) < 1e-12);
  CHECK(std::abs(tanh_scalar(-21.0) + 1.0) < 1e-12);
  CHECK(std::isnan(tanh_scalar(std::nan(""))));
  std::mt19937_64 rng(61);
  double worst = 0.0;
  for (int i = 0; i < 200000; ++i) {
    const double x = std::ldexp(std::uniform_real_distribution<double>(-1.0, 1.0)(rng),
                                std::uniform_int_distribution<int>(-20, 5)(rng));
    worst = std::max(worst, std::abs(tanh_scalar(x) - std::tanh(x)));
  }
  CHECK(worst <= 1e-15);
  auto t = tanh(Tensor::constant(Shape{3}, {-0.5, 0.0, 2.0}));
  CHECK(t.values()[0] == doctest::Approx(std::tanh(-0.5)).epsilon(1e-15));
}

TEST_CASE("broadcast_add_channels oracles") {
  const std::size_t m = 6;
  const auto sv = random_values(2 * 3 * m, 71);
  auto series = Tensor::constant(Shape{2, 3, m}, sv);
  auto zero = broadcast_add_channels(series, Tensor::constant(Shape{2, 2}, {0, 0, 0, 0}));
  for (std::size_t i = 0; i < sv.size(); ++i) CHECK(zero.values()[i] == sv[i]);

  auto two = Tensor::constant(Shape{1, 2, 2}, {1, 2, 3, 4});
  auto shifted = broadcast_add_channels(two, Tensor::constant(Shape{1, 1}, {5.0}));
  CHECK(shifted.values()[0] == 6.0);
  CHECK(shifted.values()[1] == 7.0);
  CHECK(shifted.values()[2] == 3.0);
  CHECK(shifted.values()[3] == 4.0);

  const auto bv = random_values(2 * 2, 72);
  auto y = broadcast_add_channels(series, Tensor::constant(Shape{2, 2}, bv));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t k = 0; k < m; ++k) {
        const double expect = sv[(b * 3 + c) * m + k] + (c < 2 ? bv[b * 2 + c] : 0.0);
        CHECK(y.values()[(b * 3 + c) * m + k] == expect);
      }
  CHECK_THROWS_AS(broadcast_add_channels(series, Tensor::constant(Shape{2, 4}, std::vector<double>(8, 0.0))),
                  std::invalid_argument);
}

TEST_CASE("subtract_time_mean oracles") {
  auto constant = subtract_time_mean(Tensor::constant(Shape{1, 1, 4}, {2.5, 2.5, 2.5, 2.5}));
  for (double v : constant.values()) CHECK(v == 0.0);
  auto centered = subtract_time_mean(Tensor::constant(Shape{1, 1, 4}, {1.0, -1.0, 2.0, -2.0}));
  CHECK(centered.values()[2] == 2.0);
  const auto rv = random_values(3 * 1024, 81, -5.0, 7.0);
  auto r = subtract_time_mean(Tensor::constant(Shape{3, 1, 1024}, rv));
  for (std::size_t b = 0; b < 3; ++b) {
    double mean = 0.0;
    for (std::size_t k = 0; k < 1024; ++k) mean += r.values()[b * 1024 + k];
    CHECK(std::abs(mean / 1024.0) < 1e-14);
  }
}

TEST_CASE("backward is linear in the output") {
  auto x = Tensor::parameter(Shape{1, 1, 8}, random_values(8, 91));
  auto v = Tensor::parameter(Shape{2, 1, 3}, random_values(6, 92));
  auto g = Tensor::parameter(Shape{2}, {1.0, 0.5});
  auto b = Tensor::parameter(Shape{2}, {0.1, -0.1});
  auto y = tanh(conv1d_circular(x, WeightNormedKernel{v, g, b}, 1));
  const auto wa = random_values(16, 93), wb = random_values(16, 94);
  sum(mul(y, Tensor::constant(Shape{1, 2, 8}, wa))).backward();
  const std::vector<double> ga(v.grad().begin(), v.grad().end());
  v.zero_grad();
  x.zero_grad();
  g.zero_grad();
  b.zero_grad();
  y = tanh(conv1d_circular(x, WeightNormedKernel{v, g, b}, 1));
  sum(mul(y, Tensor::constant(Shape{1, 2, 8}, wb))).backward();
  const std::vector<double> gb(v.grad().begin(), v.grad().end());
  v.zero_grad();
  y = tanh(conv1d_circular(x, WeightNormedKernel{v, g, b}, 1));
  add(sum(mul(y, Tensor::constant(Shape{1, 2, 8}, wa))), sum(mul(y, Tensor::constant(Shape{1, 2, 8}, wb)))).backward();
  for (std::size_t i = 0; i < ga.size(); ++i) CHECK(std::abs(v.grad()[i] - (ga[i] + gb[i])) < 1e-13);
}

TEST_CASE("shoelace_sum and losses with gradients") {
  const std::size_t m = 12;
  const auto bv = random_values(2 * m, 101);
  auto h = Tensor::parameter(Shape{2, 1, m}, random_values(2 * m, 102));
  auto s = shoelace_sum(bv, h);
  REQUIRE(s.shape() == Shape{2, 1});
  for (std::size_t r = 0; r < 2; ++r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      acc += bv[r * m + i] * (h.values()[r * m + (i + m - 1) % m] - h.values()[r * m + (i + 1) % m]);
    CHECK(std::abs(s.values()[r] - acc) < 1e-14);
  }
  auto mse = mean_squared_error(affine(h, 1.0, 1.0), h.values());
  CHECK(mse.item() == doctest::Approx(1.0).epsilon(1e-14));

  auto p = Tensor::parameter(Shape{2, 1}, {std::exp(1.0) * 3.0, std::exp(1.0) * 5.0});
  std::vector<double> target{3.0, 5.0};
  auto msle = mean_squared_log_error(p, target);
  CHECK(msle.item() == doctest::Approx(1.0).epsilon(1e-14));
  msle.backward();
  // d/dp (1/N)(ln p - ln t)^2 = (2/N)(ln p - ln t)/p
  CHECK(p.grad()[0] == doctest::Approx(1.0 / p.values()[0]).epsilon(1e-13));

  auto clamped = Tensor::parameter(Shape{1, 1}, {-4.0});
  auto lc = mean_squared_log_error(clamped, std::vector<double>{1.0});
  lc.backward();
  CHECK(std::isfinite(lc.item()));
  CHECK(clamped.grad()[0] == 0.0);
  CHECK_THROWS_AS(mean_squared_log_error(p, std::vector<double>{0.0, 1.0}), std::invalid_argument);
}
