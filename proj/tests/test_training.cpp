#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

#include "helpers.hpp"
#include "multitrans/ablation.hpp"
#include "multitrans/checkpoint.hpp"

using namespace multitrans;
namespace fs = std::filesystem;

namespace {

// Small enough to train in well under a second.
RunConfig tiny_run(std::size_t n = 40) {
  RunConfig c;
  c.synth.n = n;
  c.synth.height = 8;
  c.synth.width = 8;
  c.model.text.model_dim = 8;
  c.model.text.depth = 1;
  c.model.text.num_heads = 2;
  c.model.text.mlp_expansion = 2;
  c.model.image.patch_size = 4;
  c.model.image.model_dim = 8;
  c.model.image.depth = 1;
  c.model.image.num_heads = 2;
  c.model.image.mlp_expansion = 2;
  c.model.fusion.num_heads = 2;
  c.train.epochs = 3;
  c.finalize();
  return c;
}

Dataset tiny_data(const RunConfig& c) { return generate_synthetic(c.synth).dataset; }

std::vector<std::vector<float>> snapshot(const ParameterStore<float>& store) {
  std::vector<std::vector<float>> out;
  for (const auto& e : store.entries()) out.emplace_back(e.tensor.data().begin(), e.tensor.data().end());
  return out;
}

}  // namespace

TEST_CASE("split arithmetic") {
  auto a = split_indices(128, {}, 1);
  CHECK(a.train.size() == 89);
  CHECK(a.val.size() == 25);
  CHECK(a.test.size() == 14);
  auto b = split_indices(130, {}, 1);
  CHECK(b.train.size() == 91);
  CHECK(b.val.size() == 26);
  CHECK(b.test.size() == 13);
  for (std::size_t n : {10u, 37u, 128u, 600u}) {
    auto s = split_indices(n, {}, 3);
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    all.insert(s.val.begin(), s.val.end());
    all.insert(s.test.begin(), s.test.end());
    CHECK(all.size() == n);
    CHECK(s.train.size() + s.val.size() + s.test.size() == n);
    CHECK(*all.rbegin() == n - 1);
  }
  CHECK(split_indices(128, {}, 9).train == split_indices(128, {}, 9).train);
  CHECK(split_indices(128, {}, 9).train != split_indices(128, {}, 10).train);
  CHECK_THROWS_AS(split_indices(9, {}, 1), DataError);
  CHECK_THROWS_AS(split_indices(100, SplitRatios{6, 2, 1}, 1), ConfigError);
}

TEST_CASE("stratified split keeps class proportions") {
  std::vector<std::int32_t> labels(100, 0);
  std::fill(labels.begin(), labels.begin() + 40, 1);
  auto s = split_indices(100, {}, 2, labels);
  auto positives = [&](const std::vector<std::size_t>& part) {
    return std::count_if(part.begin(), part.end(), [&](std::size_t i) { return labels[i] == 1; });
  };
  CHECK(positives(s.train) == 28);
  CHECK(positives(s.val) == 8);
  CHECK(positives(s.test) == 4);
}

TEST_CASE("optimizer steps") {
  ParameterStore<float> store;
  auto enc = store.add("text.w", Tensor<float>({2}, {1.0f, -1.0f}));
  auto head = store.add("fusion.w", Tensor<float>({2}, {1.0f, -1.0f}));
  auto set_grads = [&] {
    for (auto t : {enc, head}) {
      auto g = t.mutable_grad();
      g[0] = 0.5f;
      g[1] = -2.0f;
    }
  };
  SUBCASE("sgd") {
    TrainConfig c;
    c.optimizer = OptimizerKind::sgd;
    c.learning_rate = 0.1;
    Optimizer<float> opt(c, store);
    set_grads();
    opt.step(store);
    CHECK(head[0] == doctest::Approx(0.95f));
    CHECK(head[1] == doctest::Approx(-0.8f));
  }
  SUBCASE("adam moves each weight by about lr on the first step") {
    TrainConfig c;
    c.learning_rate = 0.01;
    Optimizer<float> opt(c, store);
    set_grads();
    opt.step(store);
    CHECK(head[0] == doctest::Approx(0.99f).epsilon(1e-5));
    CHECK(head[1] == doctest::Approx(-0.99f).epsilon(1e-5));
  }
  SUBCASE("encoder rate scale") {
    TrainConfig c;
    c.optimizer = OptimizerKind::sgd;
    c.learning_rate = 0.1;
    c.encoder_lr_scale = 0.0;
    Optimizer<float> opt(c, store);
    set_grads();
    opt.step(store);
    CHECK(enc[0] == 1.0f);
    CHECK(head[0] == doctest::Approx(0.95f));
  }
  SUBCASE("decoupled weight decay") {
    TrainConfig c;
    c.optimizer = OptimizerKind::sgd;
    c.learning_rate = 0.1;
    c.weight_decay = 0.5;
    Optimizer<float> opt(c, store);
    for (auto t : {enc, head}) std::fill(t.mutable_grad().begin(), t.mutable_grad().end(), 0.0f);
    opt.step(store);
    CHECK(head[0] == doctest::Approx(0.95f));
  }
  CHECK(parse_optimizer("adam") == OptimizerKind::adam);
  CHECK(parse_optimizer("sgd_momentum") == OptimizerKind::sgd_momentum);
  CHECK_THROWS_AS(parse_optimizer("lion"), ConfigError);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
  auto c = tiny_run();
  c.train.learning_rate = 0.0;
  auto data = tiny_data(c);
  adapt_to_dataset(c, data);
  MultitransModel<float> fresh(c.model, c.seed);
  auto e = run_experiment(data, c);
  CHECK(snapshot(e.model.parameters()) == snapshot(fresh.parameters()));
  CHECK(e.result.history.size() == 3);
}

TEST_CASE("training is deterministic for a seed") {
  auto c = tiny_run();
  auto data = tiny_data(c);
  auto a = run_experiment(data, c);
  auto b = run_experiment(data, c);
  REQUIRE(a.result.history.size() == b.result.history.size());
  for (std::size_t i = 0; i < a.result.history.size(); ++i) {
    CHECK(a.result.history[i].train_loss == b.result.history[i].train_loss);
    CHECK(a.result.history[i].val_accuracy == b.result.history[i].val_accuracy);
  }
  CHECK(snapshot(a.model.parameters()) == snapshot(b.model.parameters()));
  CHECK(a.test->scores == b.test->scores);
  auto c2 = c;
  c2.seed = 2;
  c2.finalize();
  auto d = run_experiment(data, c2);
  CHECK(d.result.history[0].train_loss != a.result.history[0].train_loss);
}

TEST_CASE("best epoch is restored and reported") {
  auto c = tiny_run();
  c.train.epochs = 6;
  auto data = tiny_data(c);
  auto e = run_experiment(data, c);
  REQUIRE(e.result.best_epoch >= 1);
  double best = 0.0;
  for (const auto& h : e.result.history) best = std::max(best, h.val_accuracy);
  CHECK(e.result.best_val_accuracy == best);
  CHECK(e.result.history[e.result.best_epoch - 1].val_accuracy == best);
  CHECK(e.val->accuracy == doctest::Approx(best));
}

TEST_CASE("evaluate") {
  auto c = tiny_run(20);
  auto data = tiny_data(c);
  adapt_to_dataset(c, data);
  MultitransModel<float> m(c.model, 1);
  for (auto t : {m.fusion()->classifier.weight, m.fusion()->classifier.bias}) {
    for (auto& v : t.mutable_data()) v = 0.0f;
  }
  auto& bias = m.fusion()->classifier.bias;
  auto b = bias;
  b.mutable_data()[kPoorOutcome] = 1.0f;  // always predicts poor
  std::vector<std::size_t> idx;
  std::size_t poor = 0, good = 0;
  for (std::size_t i = 0; i < data.samples.size() && idx.size() < 8; ++i) {
    auto& count = data.samples[i].label == kPoorOutcome ? poor : good;
    if (count < 4) {
      ++count;
      idx.push_back(i);
    }
  }
  REQUIRE(idx.size() == 8);
  auto set = select(data.samples, idx);
  auto r = evaluate(m, std::span<const Sample* const>(set));
  CHECK(r.accuracy == 0.5);
  CHECK(r.counts.tp == 4);
  CHECK(r.counts.fp == 4);
  CHECK(*r.auc == 0.5);
  CHECK_THROWS_AS(evaluate(m, std::span<const Sample* const>()), DataError);
}

TEST_CASE("checkpoint round trip") {
  auto c = tiny_run();
  auto data = tiny_data(c);
  auto e = run_experiment(data, c);
  adapt_to_dataset(c, data);
  const auto path = fs::temp_directory_path() / ("multitrans_ckpt_" + std::to_string(::getpid()));
  save_checkpoint(path, make_checkpoint(e.model.parameters(), echo_config(c), e.result.best_epoch,
                                        e.result.best_val_accuracy));
  auto loaded = load_checkpoint(path);
  CHECK(loaded.epoch == e.result.best_epoch);
  CHECK(loaded.metric == e.result.best_val_accuracy);
  auto c2 = parse_config(loaded.config_text);
  c2.finalize();
  MultitransModel<float> m(c2.model, 99);
  apply_checkpoint(loaded, m.parameters());
  CHECK(snapshot(m.parameters()) == snapshot(e.model.parameters()));
  auto test = select(data.samples, e.split.test);
  auto r = evaluate(m, std::span<const Sample* const>(test));
  CHECK(r.scores == e.test->scores);
  CHECK(r.accuracy == e.test->accuracy);

  c2.model.mode = FusionMode::text_only;
  MultitransModel<float> other(c2.model, 1);
  CHECK_THROWS_AS(apply_checkpoint(loaded, other.parameters()), DataError);

  {
    std::ofstream trunc(path, std::ios::binary | std::ios::trunc);
    trunc << "MTCKPT";
  }
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  fs::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
}

TEST_CASE("ablation grid") {
  auto grid = parse_grid("table1");
  REQUIRE(grid.size() == 9);
  CHECK(grid[0].key() == "none:base:text");
  CHECK(grid[8].key() == "windowed:roberta:multimodal");
  auto one = parse_grid(" standard:base:multimodal ");
  REQUIRE(one.size() == 1);
  CHECK(one[0].image == ImageVariant::standard);
  CHECK_THROWS_AS(parse_grid("standard:base:text"), ConfigError);
  CHECK_THROWS_AS(parse_grid("none:base:multimodal"), ConfigError);
  CHECK_THROWS_AS(parse_grid("standard:base"), ConfigError);
  CHECK_THROWS_AS(parse_grid("resnet:base:multimodal"), ConfigError);
  CHECK_THROWS_AS(parse_grid(""), ConfigError);
}

TEST_CASE("median and ordering") {
  std::vector<CellMetrics> runs{{0.5, 0.1, 0.9}, {0.7, 0.3, std::nullopt}, {0.6, 0.2, 0.7}};
  auto m = median(runs);
  CHECK(m.accuracy == 0.6);
  CHECK(m.f1 == 0.2);
  CHECK(*m.auc == doctest::Approx(0.8));

  auto row = [](const char* cell, double acc) {
    AblationRow r;
    r.cell = parse_cell(cell);
    r.median_test.accuracy = acc;
    return r;
  };
  auto sorted = sort_rows({row("standard:base:multimodal", 0.9), row("none:base:text", 0.6),
                           row("standard:none:image", 0.7), row("windowed:base:multimodal", 0.95)});
  CHECK(sorted[0].cell.key() == "standard:none:image");
  CHECK(sorted[1].cell.key() == "none:base:text");
  CHECK(sorted[2].cell.key() == "windowed:base:multimodal");
  auto table = format_table(sorted);
  CHECK(table.find("Method") == 0);
  CHECK(table.find("ACC") < table.find("F1-score"));
  CHECK(table.find("F1-score") < table.find("AUC"));
  CHECK(table.find("Unimodal") != std::string::npos);
  CHECK(table.find("None") != std::string::npos);
}

TEST_CASE("one-cell ablation gives one row") {
  auto c = tiny_run();
  auto data = tiny_data(c);
  auto rows = ablate(data, c, parse_grid("none:albert:text"), {1, 2, 3}, 2);
  REQUIRE(rows.size() == 1);
  CHECK_FALSE(rows[0].failed());
  CHECK(rows[0].test.size() == 3);
  auto serial = ablate(data, c, parse_grid("none:albert:text"), {1, 2, 3}, 1);
  CHECK(serial[0].median_test.accuracy == rows[0].median_test.accuracy);
  CHECK(format_table(rows).find("None") != std::string::npos);
}
