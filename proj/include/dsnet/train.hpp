#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dsnet/checkpoint.hpp"
#include "dsnet/cifar.hpp"
#include "dsnet/common.hpp"
#include "dsnet/network.hpp"
#include "dsnet/parallel.hpp"
#include "dsnet/train_config.hpp"

namespace dsnet {

// Momentum SGD with uniform weight decay folded into the gradient:
//   v <- momentum * v + grad + weight_decay * param
//   param <- param - lr * v
template <typename T>
class SGD {
 public:
  SGD(ParameterRegistry<T>& params, double momentum, double weight_decay)
      : params_(params), momentum_(momentum), weight_decay_(weight_decay) {
    for (const auto& e : params.entries()) {
      velocity_.emplace_back(static_cast<std::size_t>(e.tensor.numel()), T(0));
    }
  }

  void step(double lr) {
    const T m = static_cast<T>(momentum_);
    const T wd = static_cast<T>(weight_decay_);
    const T rate = static_cast<T>(lr);
    for (std::size_t i = 0; i < velocity_.size(); ++i) {
      auto& e = params_.entries()[i];
      T* p = e.tensor.data();
      const T* g = e.tensor.grad_ptr();
      auto& v = velocity_[i];
      for (std::size_t j = 0; j < v.size(); ++j) {
        v[j] = m * v[j] + (g != nullptr ? g[j] : T(0)) + wd * p[j];
        p[j] -= rate * v[j];
      }
    }
  }

  void append_state(Checkpoint& ckpt) const {
    for (std::size_t i = 0; i < velocity_.size(); ++i) {
      const auto& e = params_.entries()[i];
      const auto s = e.tensor.shape();
      ckpt.entries.push_back(
          make_entry<T>("opt/" + e.name, velocity_[i], {s.n, s.c, s.h, s.w}));
    }
  }

  // Missing records reset the matching velocity to zero, so checkpoints
  // written without optimizer state still load.
  void load_state(const Checkpoint& ckpt) {
    for (std::size_t i = 0; i < velocity_.size(); ++i) {
      const auto& e = params_.entries()[i];
      const auto* rec = ckpt.find("opt/" + e.name);
      if (rec == nullptr) {
        std::fill(velocity_[i].begin(), velocity_[i].end(), T(0));
        continue;
      }
      auto values = entry_values<T>(*rec);
      if (values.size() != velocity_[i].size()) {
        throw CheckpointError("optimizer state 'opt/" + e.name +
                              "' does not match the parameter size");
      }
      velocity_[i] = std::move(values);
    }
  }

 private:
  ParameterRegistry<T>& params_;
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<T>> velocity_;
};

// Counts labels ranked inside the top 1 and top 5 logits. Ties resolve by
// class index, so the counts are independent of any sort implementation.
template <typename T>
void count_topk(const Tensor<T>& logits, const std::vector<std::int64_t>& labels,
                std::int64_t& top1, std::int64_t& top5) {
  const std::int64_t nb = logits.shape().n;
  const std::int64_t nk = logits.shape().c;
  for (std::int64_t n = 0; n < nb; ++n) {
    const T* row = logits.data() + n * nk;
    const std::int64_t lab = labels[static_cast<std::size_t>(n)];
    const T lv = row[lab];
    std::int64_t rank = 0;
    for (std::int64_t k = 0; k < nk; ++k) {
      if (row[k] > lv || (row[k] == lv && k < lab)) ++rank;
    }
    if (rank < 1) ++top1;
    if (rank < 5) ++top5;
  }
}

struct EvalResult {
  double top1_error = 0;  // percent
  double top5_error = 0;  // percent
};

// Full-dataset evaluation with standardization only. The final batch keeps
// its natural (smaller) size.
template <typename T>
EvalResult evaluate(Network<T>& net, const Dataset& ds, const ChannelStats& stats,
                    std::int64_t batch) {
  if (ds.count == 0) throw DataError("evaluating an empty dataset");
  if (batch < 1) throw ConfigError("evaluation batch must be >= 1");
  std::int64_t top1 = 0, top5 = 0;
  for (std::int64_t start = 0; start < ds.count; start += batch) {
    const std::int64_t bs = std::min(batch, ds.count - start);
    Tensor<T> x(Shape{bs, 3, 32, 32});
    std::vector<std::int64_t> labels(static_cast<std::size_t>(bs));
    for (std::int64_t b = 0; b < bs; ++b) {
      standardize_into(ds.image(start + b), stats, x.data() + b * 3072);
      labels[static_cast<std::size_t>(b)] = ds.labels[static_cast<std::size_t>(start + b)];
    }
    auto logits = net.forward(x, NormMode::eval);
    count_topk(logits, labels, top1, top5);
  }
  const double n = static_cast<double>(ds.count);
  return {100.0 * (1.0 - top1 / n), 100.0 * (1.0 - top5 / n)};
}

struct TrainResult {
  std::int64_t iterations = 0;
  double final_loss = 0;
  EvalResult final_eval;
  bool evaluated = false;
  std::string metrics_path;
  std::string checkpoint_path;
};

// Iteration-based training: full-permutation shuffling per epoch with the
// trailing partial batch dropped, padded-crop plus flip augmentation, and a
// metrics CSV with train rows every log_interval and eval rows every
// eval_interval. Checkpoints are written at each schedule milestone and at
// the end.
template <typename T>
TrainResult train_loop(Network<T>& net, const TrainConfig& cfg, const Dataset& train_ds,
                       const Dataset* val_ds, const std::string& out_dir) {
  validate_train_config(cfg);
  if (train_ds.count < cfg.batch) {
    throw TrainError("training set has " + std::to_string(train_ds.count) +
                     " images, smaller than one batch of " + std::to_string(cfg.batch));
  }
  if (cfg.deterministic) set_threads(1);
  std::filesystem::create_directories(out_dir);

  const ChannelStats stats = compute_channel_stats(train_ds);
  SGD<T> opt(net.params, cfg.momentum, cfg.weight_decay);
  std::mt19937_64 rng(cfg.seed);

  std::vector<std::int64_t> order(static_cast<std::size_t>(train_ds.count));
  std::iota(order.begin(), order.end(), std::int64_t{0});
  std::int64_t cursor = train_ds.count;  // forces a shuffle before the first batch

  TrainResult result;
  result.metrics_path = out_dir + "/metrics.csv";
  std::ofstream csv(result.metrics_path, std::ios::trunc);
  if (!csv) throw TrainError("cannot open '" + result.metrics_path + "' for writing");
  csv << "iter,lr,train_loss,train_top1,val_top1,val_top5,seconds\n";
  csv << std::setprecision(10);

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  auto save = [&](const std::string& name, std::int64_t done) {
    std::ostringstream rng_text;
    rng_text << rng;
    auto ckpt = make_checkpoint(net, cfg, done, rng_text.str(), &stats);
    opt.append_state(ckpt);
    write_checkpoint(out_dir + "/" + name, ckpt);
  };

  double window_loss = 0, window_err = 0;
  std::int64_t window_n = 0;

  for (std::int64_t it = 0; it < cfg.iterations; ++it) {
    if (cursor + cfg.batch > train_ds.count) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }

    Tensor<T> x(Shape{cfg.batch, 3, 32, 32});
    std::vector<std::int64_t> labels(static_cast<std::size_t>(cfg.batch));
    for (std::int64_t b = 0; b < cfg.batch; ++b) {
      const std::int64_t idx = order[static_cast<std::size_t>(cursor + b)];
      const AugmentDraw draw = draw_augment(rng);
      augment_into(train_ds.image(idx), draw, stats, x.data() + b * 3072);
      labels[static_cast<std::size_t>(b)] = train_ds.labels[static_cast<std::size_t>(idx)];
    }
    cursor += cfg.batch;

    net.params.zero_grad();
    auto logits = net.forward(x, NormMode::train);
    auto loss = softmax_cross_entropy(logits, labels);
    const double loss_value = static_cast<double>(loss.vec()[0]);
    if (!std::isfinite(loss_value)) {
      throw TrainError("non-finite loss at iteration " + std::to_string(it + 1));
    }
    std::int64_t top1 = 0, top5 = 0;
    count_topk(logits, labels, top1, top5);

    backward(loss);
    const double lr = lr_at(it, cfg);
    opt.step(lr);

    window_loss += loss_value;
    window_err += 100.0 * (1.0 - static_cast<double>(top1) / static_cast<double>(cfg.batch));
    ++window_n;
    result.final_loss = loss_value;

    const std::int64_t done = it + 1;
    if (done % cfg.log_interval == 0 || done == cfg.iterations) {
      csv << done << ',' << lr << ',' << window_loss / static_cast<double>(window_n)
          << ',' << window_err / static_cast<double>(window_n) << ",,," << elapsed()
          << '\n';
      csv.flush();
      window_loss = window_err = 0;
      window_n = 0;
    }
    if (val_ds != nullptr && (done % cfg.eval_interval == 0 || done == cfg.iterations)) {
      const EvalResult ev = evaluate(net, *val_ds, stats, cfg.batch);
      csv << done << ",,,," << ev.top1_error << ',' << ev.top5_error << ',' << elapsed()
          << '\n';
      csv.flush();
      result.final_eval = ev;
      result.evaluated = true;
    }
    if (std::find(cfg.milestones.begin(), cfg.milestones.end(), done) !=
        cfg.milestones.end()) {
      save("ckpt_iter" + std::to_string(done) + ".dsnt", done);
    }
  }

  result.iterations = cfg.iterations;
  result.checkpoint_path = out_dir + "/final.dsnt";
  save("final.dsnt", cfg.iterations);
  return result;
}

}  // namespace dsnet
