#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dsnet/train.hpp"

using namespace dsnet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("dsnet_train_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Dataset brightness_dataset(int count, int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> noise(0, 15);
  Dataset ds;
  ds.count = count;
  ds.classes = 10;
  ds.images.resize(static_cast<std::size_t>(count) * 3072);
  ds.labels.resize(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int label = i % classes;
    ds.labels[static_cast<std::size_t>(i)] = label;
    for (int p = 0; p < 3072; ++p) {
      ds.images[static_cast<std::size_t>(i) * 3072 + static_cast<std::size_t>(p)] =
          static_cast<std::uint8_t>(30 + 60 * label + noise(rng));
    }
  }
  return ds;
}

NetworkConfig micro_cfg(std::uint64_t seed) {
  NetworkConfig cfg = custom_config(Variant::dsnet, {{2, 4}}, StemKind::cifar, 10);
  cfg.seed = seed;
  return cfg;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

std::vector<unsigned char> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("momentum descent follows the hand-unrolled recurrence") {
  const double m = 0.9, wd = 0.01, lr = 0.1;
  const std::vector<double> p0 = {1.0, -2.0, 0.5};

  Tensor<double> p(Shape{1, 3, 1, 1});
  for (int i = 0; i < 3; ++i) p.data()[i] = p0[static_cast<std::size_t>(i)];
  p.make_leaf();
  ParameterRegistry<double> reg;
  reg.add("p", p);
  SGD<double> opt(reg, m, wd);

  backward(sum(p));  // unit gradient on every coordinate
  opt.step(lr);
  reg.zero_grad();
  backward(sum(p));
  opt.step(lr);

  for (int i = 0; i < 3; ++i) {
    double pv = p0[static_cast<std::size_t>(i)];
    double v = 0.0;
    v = m * v + 1.0 + wd * pv;
    pv -= lr * v;
    v = m * v + 1.0 + wd * pv;
    pv -= lr * v;
    REQUIRE(p.data()[i] == pv);
  }
}

TEST_CASE("a zero learning rate leaves parameters bitwise untouched") {
  Tensor<float> p(Shape{1, 4, 1, 1});
  for (int i = 0; i < 4; ++i) p.data()[i] = 0.25f * static_cast<float>(i + 1);
  p.make_leaf();
  const std::vector<float> before(p.data(), p.data() + 4);
  ParameterRegistry<float> reg;
  reg.add("p", p);
  SGD<float> opt(reg, 0.9, 0.1);
  backward(sum(p));
  opt.step(0.0);
  for (int i = 0; i < 4; ++i) {
    REQUIRE(p.data()[i] == before[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("optimizer state resumes the exact trajectory") {
  auto make_param = [](ParameterRegistry<double>& reg) {
    Tensor<double> p(Shape{1, 2, 1, 1});
    p.data()[0] = 0.3;
    p.data()[1] = -0.7;
    p.make_leaf();
    reg.add("p", p);
    return p;
  };

  ParameterRegistry<double> reg_a, reg_b;
  auto pa = make_param(reg_a);
  auto pb = make_param(reg_b);

  SGD<double> straight(reg_b, 0.9, 0.01);
  backward(sum(pb));
  straight.step(0.1);
  reg_b.zero_grad();
  backward(sum(pb));
  straight.step(0.1);

  SGD<double> first(reg_a, 0.9, 0.01);
  backward(sum(pa));
  first.step(0.1);
  Checkpoint ckpt;
  first.append_state(ckpt);
  REQUIRE(ckpt.find("opt/p") != nullptr);

  SGD<double> resumed(reg_a, 0.9, 0.01);
  resumed.load_state(ckpt);
  reg_a.zero_grad();
  backward(sum(pa));
  resumed.step(0.1);

  REQUIRE(pa.data()[0] == pb.data()[0]);
  REQUIRE(pa.data()[1] == pb.data()[1]);
}

TEST_CASE("optimizer state handles absent and malformed records") {
  Tensor<double> p(Shape{1, 2, 1, 1});
  p.make_leaf();
  ParameterRegistry<double> reg;
  reg.add("p", p);
  SGD<double> opt(reg, 0.9, 0.0);

  Checkpoint empty;
  opt.load_state(empty);  // resets to zero velocity, no error

  Checkpoint wrong;
  wrong.entries.push_back(
      make_entry<double>("opt/p", std::vector<double>(3, 0.0), {1, 3, 1, 1}));
  REQUIRE_THROWS_AS(opt.load_state(wrong), CheckpointError);
}

TEST_CASE("top-k counting resolves ties by class index") {
  Tensor<double> logits(Shape{4, 6, 1, 1});
  const double rows[4][6] = {
      {3.0, 1.0, 2.0, 0.0, -1.0, -2.0},  // label 0: rank 0
      {3.0, 1.0, 2.0, 0.0, -1.0, -2.0},  // label 2: rank 1
      {5.0, 5.0, 5.0, 5.0, 5.0, 5.0},    // label 3: rank 3 by index tie-break
      {5.0, 5.0, 5.0, 5.0, 5.0, 5.0},    // label 5: rank 5, outside top 5
  };
  for (int n = 0; n < 4; ++n) {
    for (int k = 0; k < 6; ++k) logits.data()[n * 6 + k] = rows[n][k];
  }
  std::int64_t top1 = 0, top5 = 0;
  count_topk(logits, {0, 2, 3, 5}, top1, top5);
  REQUIRE(top1 == 1);
  REQUIRE(top5 == 3);
}

TEST_CASE("evaluation matches a per-image recomputation") {
  auto ds = brightness_dataset(5, 4, 21);
  ChannelStats st = compute_channel_stats(ds);
  auto net = build_network<double>(micro_cfg(31));
  {
    NoGradGuard guard;
    Tensor<double> warm(Shape{2, 3, 32, 32});
    for (int b = 0; b < 2; ++b) standardize_into(ds.image(b), st, warm.data() + b * 3072);
    net.forward(warm, NormMode::train);
  }

  std::int64_t top1 = 0, top5 = 0;
  {
    NoGradGuard guard;
    for (std::int64_t i = 0; i < ds.count; ++i) {
      Tensor<double> x(Shape{1, 3, 32, 32});
      standardize_into(ds.image(i), st, x.data());
      auto logits = net.forward(x, NormMode::eval);
      count_topk(logits, {ds.labels[static_cast<std::size_t>(i)]}, top1, top5);
    }
  }
  const double want_top1 = 100.0 * (1.0 - static_cast<double>(top1) / 5.0);
  const double want_top5 = 100.0 * (1.0 - static_cast<double>(top5) / 5.0);

  EvalResult ev = evaluate(net, ds, st, 2);  // batches of 2, 2, 1
  REQUIRE(ev.top1_error == want_top1);
  REQUIRE(ev.top5_error == want_top5);

  Dataset empty;
  REQUIRE_THROWS_AS(evaluate(net, empty, st, 2), DataError);
  REQUIRE_THROWS_AS(evaluate(net, ds, st, 0), ConfigError);
}

TEST_CASE("the training loop logs, checkpoints, and repeats bit for bit") {
  auto train_ds = brightness_dataset(64, 4, 41);
  auto val_ds = brightness_dataset(12, 4, 42);

  TrainConfig cfg;
  cfg.iterations = 12;
  cfg.batch = 8;
  cfg.lr = 0.01;
  cfg.milestones = {8};
  cfg.log_interval = 4;
  cfg.eval_interval = 6;
  cfg.seed = 5;
  cfg.precision = Precision::f64;
  cfg.deterministic = true;

  TempDir dir;
  auto run = [&](const std::string& name) {
    auto net = build_network<double>(micro_cfg(51));
    return train_loop(net, cfg, train_ds, &val_ds, (dir.path / name).string());
  };
  TrainResult a = run("a");
  TrainResult b = run("b");

  REQUIRE(a.iterations == 12);
  REQUIRE(std::isfinite(a.final_loss));
  REQUIRE(a.evaluated);
  REQUIRE(fs::exists(dir.path / "a" / "ckpt_iter8.dsnt"));
  REQUIRE(fs::exists(a.checkpoint_path));
  REQUIRE(slurp(dir.path / "a" / "final.dsnt") == slurp(dir.path / "b" / "final.dsnt"));
  REQUIRE(slurp(dir.path / "a" / "ckpt_iter8.dsnt") ==
          slurp(dir.path / "b" / "ckpt_iter8.dsnt"));

  std::ifstream csv(a.metrics_path);
  REQUIRE(csv.good());
  std::string line;
  REQUIRE(std::getline(csv, line));
  REQUIRE(line == "iter,lr,train_loss,train_top1,val_top1,val_top5,seconds");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(csv, line)) rows.push_back(split_csv(line));
  // train rows at 4, 8, 12 and eval rows at 6, 12
  REQUIRE(rows.size() == 5);
  const std::vector<std::string> iters = {"4", "6", "8", "12", "12"};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    REQUIRE(rows[i].size() == 7);
    REQUIRE(rows[i][0] == iters[i]);
  }
  REQUIRE(rows[0][4].empty());  // train rows carry no eval columns
  REQUIRE(rows[0][5].empty());
  REQUIRE_FALSE(rows[0][1].empty());
  REQUIRE(rows[1][1].empty());  // eval rows carry no train columns
  REQUIRE(rows[1][2].empty());
  REQUIRE_FALSE(rows[1][4].empty());

  // the checkpoint carries the channel statistics of the training split
  Checkpoint ckpt = read_checkpoint(a.checkpoint_path);
  REQUIRE(ckpt.has_channel_stats);
  REQUIRE(ckpt.iteration == 12);
  ChannelStats st = compute_channel_stats(train_ds);
  REQUIRE(ckpt.channel_stats.mean[0] == st.mean[0]);
  REQUIRE(ckpt.find("opt/fc.b") != nullptr);
}

TEST_CASE("training rejects an undersized dataset") {
  auto ds = brightness_dataset(4, 4, 61);
  TrainConfig cfg;
  cfg.iterations = 2;
  cfg.batch = 8;
  cfg.milestones = {};
  auto net = build_network<double>(micro_cfg(52));
  TempDir dir;
  REQUIRE_THROWS_AS(train_loop(net, cfg, ds, nullptr, (dir.path / "x").string()),
                    TrainError);
}

TEST_CASE("a diverging run reports the iteration of the first bad loss") {
  auto ds = brightness_dataset(32, 4, 71);
  TrainConfig cfg;
  cfg.iterations = 6;
  cfg.batch = 8;
  cfg.lr = 1e200;
  cfg.milestones = {};
  cfg.log_interval = 1;
  cfg.precision = Precision::f64;
  auto net = build_network<double>(micro_cfg(53));
  TempDir dir;
  REQUIRE_THROWS_WITH(train_loop(net, cfg, ds, nullptr, (dir.path / "x").string()),
                      Catch::Matchers::ContainsSubstring("non-finite loss"));
}

TEST_CASE("the loss decreases on separable data") {
  auto ds = brightness_dataset(96, 4, 81);
  TrainConfig cfg;
  cfg.iterations = 48;
  cfg.batch = 16;
  cfg.lr = 0.02;
  cfg.milestones = {};
  cfg.log_interval = 8;
  cfg.eval_interval = 48;
  cfg.seed = 13;
  cfg.precision = Precision::f64;
  cfg.deterministic = true;

  auto net = build_network<double>(micro_cfg(54));
  TempDir dir;
  TrainResult r = train_loop(net, cfg, ds, &ds, (dir.path / "run").string());

  std::ifstream csv(r.metrics_path);
  std::string line;
  std::getline(csv, line);
  std::vector<double> losses;
  while (std::getline(csv, line)) {
    auto cells = split_csv(line);
    if (!cells[2].empty()) losses.push_back(std::stod(cells[2]));
  }
  REQUIRE(losses.size() == 6);
  REQUIRE(losses.back() < losses.front());
  REQUIRE(r.final_eval.top1_error <= 75.0);  // brightness alone beats chance
}
