// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "hardcore/error.hpp"
#include "hardcore/synthetic.hpp"
#include "hardcore/training.hpp"
#include "json.hpp"
#include "test_support.hpp"

using namespace hardcore;
using hardcore::testing::random_values;
using hardcore::testing::TempDir;
using tensor::Shape;
using tensor::Tensor;

namespace {

MaterialDataset toy(std::size_t n, std::uint64_t seed = 1) {
  SyntheticOptions o;
  o.records = n;
  o.seed = seed;
  return make_synthetic_dataset(o, "toy");
}

TrainConfig quick(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.eval_interval = 5;
  c.model = config_from_label("4-1/k3/d2/m3/p2-1");
  return c;
}

}  // namespace

TEST_CASE("loss_h oracles") {
  const auto h = random_values(3 * 16, 1);
  auto pred = Tensor::constant(Shape{3, 1, 16}, h);
  CHECK(loss_h(pred, h).item() == 0.0);
  auto shifted = h;
  for (auto& v : shifted) v += 1.0;
  CHECK(loss_h(Tensor::constant(Shape{3, 1, 16}, shifted), h).item() == doctest::Approx(1.0).epsilon(1e-14));
  const auto other = random_values(3 * 16, 2);
  double acc = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) acc += (other[i] - h[i]) * (other[i] - h[i]);
  CHECK(std::abs(loss_h(Tensor::constant(Shape{3, 1, 16}, other), h).item() - acc / 48.0) < 1e-12);
  CHECK_THROWS_AS(loss_h(pred, std::vector<double>(5, 0.0)), std::invalid_argument);
}

TEST_CASE("loss_p oracles") {
  std::vector<double> p{10.0, 200.0, 3e5};
  CHECK(loss_p(Tensor::constant(Shape{3, 1}, p), p).item() == 0.0);
  std::vector<double> ep(p);
  for (auto& v : ep) v *= std::exp(1.0);
  CHECK(loss_p(Tensor::constant(Shape{3, 1}, ep), p).item() == doctest::Approx(1.0).epsilon(1e-14));
  std::vector<double> q{12.0, 150.0, 2e5}, q1000(q), p1000(p);
  for (auto& v : q1000) v *= 1000.0;
  for (auto& v : p1000) v *= 1000.0;
  CHECK(std::abs(loss_p(Tensor::constant(Shape{3, 1}, q), p).item() -
                 loss_p(Tensor::constant(Shape{3, 1}, q1000), p1000).item()) < 1e-12);
  CHECK_THROWS_AS(loss_p(Tensor::constant(Shape{3, 1}, q), std::vector<double>{1.0, -2.0, 3.0}),
                  std::invalid_argument);
}

TEST_CASE("alpha schedule and total loss endpoints") {
  CHECK(alpha_schedule(0, 100, 1.0) == 0.0);
  CHECK(alpha_schedule(99, 100, 1.0) == 99.0 / 100.0);
  CHECK(alpha_schedule(50, 100, 0.5) == 0.25);
  auto lh = Tensor::constant(Shape{1}, {0.1234567});
  auto lp = Tensor::constant(Shape{1}, {7.654321});
  CHECK(total_loss(lh, lp, 0.0).item() == lh.item());
  CHECK(total_loss(lh, lp, 1.0).item() == lp.item());
  CHECK(total_loss(lh, lp, 0.25).item() == doctest::Approx(0.25 * 7.654321 + 0.75 * 0.1234567));
}

TEST_CASE("NAdam step matches a scalar reference") {
  auto x = Tensor::parameter(Shape{1}, {1.5});
  Nadam opt({x}, NadamParams{});
  double ref = 1.5, m = 0.0, v = 0.0;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.01;
  for (int t = 1; t <= 5; ++t) {
    opt.zero_grad();
    auto loss = tensor::sum(tensor::mul(x, x));  // grad 2x
    loss.backward();
    const double g = 2.0 * ref;
    opt.step(lr);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = b1 * m / (1 - std::pow(b1, t + 1)) + (1 - b1) * g / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    ref -= lr * mh / (std::sqrt(vh) + eps);
    CHECK(std::abs(x.values()[0] - ref) < 1e-12);
  }
  CHECK(opt.steps() == 5);

  auto y = Tensor::parameter(Shape{1}, {1.0});
  NadamParams plain;
  plain.nesterov = false;
  Nadam adam({y}, plain);
  tensor::sum(tensor::mul(y, y)).backward();
  adam.step(0.1);
  // first Adam step moves by lr * sign(g)
  CHECK(y.values()[0] == doctest::Approx(0.9).epsilon(1e-7));
}

TEST_CASE("config defaults and validation") {
  TrainConfig c;
  CHECK(c.effective_batch_size(4096) == 4096);
  CHECK(c.effective_batch_size(5000) == 1024);
  CHECK(std::pow(c.effective_lr_decay(), c.epochs) == doctest::Approx(0.01).epsilon(1e-9));
  c.beta = 1.5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("config file parsing and overrides") {
  TempDir tmp("cfg");
  const auto path = tmp.path() / "train.ini";
  {
    std::ofstream out(path);
    out << "[train]\nepochs = 300\nbeta = 0.5\nlearning_rate = 0.002\nseed = 7\n"
        << "[optimizer]\nnesterov = false\n"
        << "[model]\ntopology = 12-1/k9/d4/m11/p8-1\n"
        << "[classifier]\nsine_energy_fraction = 0.98\n"
        << "[sweep]\ntopologies = 12-8-1/k9/d4/m11/p8-1; 12-1/k9/d4/m11/p8-1\n";
  }
  auto c = load_train_config(path);
  CHECK(c.epochs == 300);
  CHECK(c.beta == 0.5);
  CHECK(c.seed == 7);
  CHECK_FALSE(c.optimizer.nesterov);
  CHECK(parameter_count(c.model) == 911);
  CHECK(c.classifier.sine_energy_fraction == 0.98);
  CHECK(c.sweep_topologies.size() == 2);
  apply_config_override(c, "train.epochs=20");
  apply_config_override(c, "model.kernel_size=5");
  CHECK(c.epochs == 20);
  CHECK(c.model.kernel_size == 5);
  CHECK_THROWS_AS(apply_config_override(c, "train.unknown=1"), std::invalid_argument);
  CHECK_THROWS_AS(apply_config_override(c, "train.epochs"), std::invalid_argument);
  CHECK_THROWS_AS(apply_config_override(c, "train.epochs=abc"), std::invalid_argument);
  {
    std::ofstream out(path);
    out << "[train]\nbogus = 1\n";
  }
  CHECK_THROWS_AS(load_train_config(path), std::invalid_argument);
}

TEST_CASE("training logs the schedule and is deterministic") {
  const auto ds = toy(12);
  const auto split = stratified_kfold(ds, 3, 0, default_strata(ds));
  const auto c = quick(12);
  std::vector<int> seen;
  const auto a = train(ds, &split, 0, c, [&](const EpochLog& e) { seen.push_back(e.epoch); });
  const auto b = train(ds, &split, 0, c);
  REQUIRE(a.log.size() == 12);
  CHECK(seen.size() == 12);
  for (int i = 0; i < 12; ++i) {
    CHECK(a.log[i].epoch == i);
    CHECK(a.log[i].alpha == (1.0 * i) / 12.0);
    CHECK(a.log[i].loss_h == b.log[i].loss_h);
    CHECK(a.log[i].loss_p == b.log[i].loss_p);
  }
  CHECK(std::isfinite(a.log[5].val_avg_rel_err));
  CHECK(std::isnan(a.log[4].val_avg_rel_err));
  CHECK(std::isfinite(a.log[11].val_avg_rel_err));
  const auto pa = a.model->parameters(), pb = b.model->parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK(std::vector<double>(pa[i].values().begin(), pa[i].values().end()) ==
          std::vector<double>(pb[i].values().begin(), pb[i].values().end()));
  REQUIRE(a.validation.has_value());
  CHECK(a.validation->n_eval == split.members(0).size());
  CHECK(a.validation_indices == split.members(0));
  // norms come from the training split only
  CHECK(a.model->norms().b_lim == compute_norms(ds, split.complement(0)).b_lim);

  // chunking does not change the full-batch step beyond rounding
  auto c2 = c;
  c2.chunk_size = 5;
  const auto chunked = train(ds, &split, 0, c2);
  CHECK(chunked.log[11].loss_h == doctest::Approx(a.log[11].loss_h).epsilon(1e-9));
}

TEST_CASE("training on all records and divergence reporting") {
  const auto ds = toy(6);
  auto c = quick(3);
  const auto run = train(ds, nullptr, std::nullopt, c);
  CHECK(run.fold == -1);
  CHECK(run.training_indices.size() == 6);
  CHECK_FALSE(run.validation.has_value());
  c.learning_rate = 1e300;
  c.epochs = 30;
  CHECK_THROWS_AS(train(ds, nullptr, std::nullopt, c), NumericError);
  try {
    train(ds, nullptr, std::nullopt, c);
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
  std::vector<WaveformRecord> untrainable(ds.records().begin(), ds.records().end());
  for (auto& r : untrainable) r.loss.reset();
  CHECK_THROWS_AS(train(MaterialDataset("x", untrainable), nullptr, std::nullopt, quick(2)), std::invalid_argument);
}

TEST_CASE("cross validation run table") {
  const auto ds = toy(10, 3);
  auto c = quick(4);
  c.k_folds = 2;
  const std::vector<std::uint64_t> seeds{0};
  const auto cv = cross_validate(ds, c, seeds, 0, 1);
  REQUIRE(cv.runs.size() == 2);
  std::set<std::size_t> a(cv.runs[0].validation_indices.begin(), cv.runs[0].validation_indices.end());
  for (auto i : cv.runs[1].validation_indices) CHECK(a.count(i) == 0);
  CHECK(a.size() + cv.runs[1].validation_indices.size() == 10);

  c.k_folds = 2;
  const std::vector<std::uint64_t> three{0, 1, 2};
  const auto cv3 = cross_validate(ds, c, three, 0, 2);
  REQUIRE(cv3.runs.size() == 6);
  REQUIRE(cv3.seed_mean_avg_rel_err.size() == 3);
  std::size_t best = 0;
  for (std::size_t i = 1; i < 3; ++i)
    if (cv3.seed_mean_avg_rel_err[i] < cv3.seed_mean_avg_rel_err[best]) best = i;
  CHECK(cv3.best_seed == three[best]);
  for (std::size_t s = 0; s < 3; ++s) {
    const double mean = (cv3.runs[2 * s].validation->avg_rel_err + cv3.runs[2 * s + 1].validation->avg_rel_err) / 2.0;
    CHECK(cv3.seed_mean_avg_rel_err[s] == doctest::Approx(mean).epsilon(1e-14));
    CHECK(cv3.runs[2 * s].config.seed == three[s]);
  }
  REQUIRE(cv3.best_pooled.has_value());
  CHECK(cv3.best_pooled->n_eval == 10);
  // threads do not change results
  const auto serial = cross_validate(ds, c, three, 0, 1);
  for (std::size_t i = 0; i < 6; ++i) CHECK(serial.runs[i].validation->avg_rel_err == cv3.runs[i].validation->avg_rel_err);
}

TEST_CASE("epoch log is line-delimited JSON") {
  TempDir tmp("log");
  std::vector<EpochLog> log(3);
  log[1].epoch = 1;
  log[1].val_avg_rel_err = 0.5;
  write_epoch_log(log, tmp.path() / "log.jsonl");
  std::ifstream in(tmp.path() / "log.jsonl");
  std::vector<nlohmann::json> rows;
  for (std::string line; std::getline(in, line);) rows.push_back(nlohmann::json::parse(line));
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].at("val_avg_rel_err").is_null());
  CHECK(rows[1].at("val_avg_rel_err").get<double>() == 0.5);
  for (const char* key : {"epoch", "loss_h", "loss_p", "alpha", "lr", "val_p95_rel_err"}) CHECK(rows[2].contains(key));
}

TEST_CASE("shipped config files parse") {
  const std::filesystem::path dir = HARDCORE_SOURCE_DIR "/configs";
  const auto c = load_train_config(dir / "default.ini");
  const TrainConfig d;
  CHECK(c.epochs == d.epochs);
  CHECK(c.learning_rate == d.learning_rate);
  CHECK(c.optimizer.nesterov == d.optimizer.nesterov);
  CHECK(c.model.label() == d.model.label());
  CHECK(c.classifier.trapezoid_max_bursts == d.classifier.trapezoid_max_bursts);
  CHECK(c.sweep_topologies.size() == 5);
  CHECK(load_train_config(dir / "desk.ini").epochs == 2000);
}
