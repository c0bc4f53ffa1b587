// Desk-scale directional comparison: depth-26 quarter-width training on
// CIFAR-10, three seeds per variant, medians compared with a 0.3-point
// allowance. Exits 77 when the dataset is not present.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "dsnet/cifar.hpp"
#include "dsnet/network.hpp"
#include "dsnet/train.hpp"

namespace fs = std::filesystem;
using namespace dsnet;

namespace {

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[1];
}

int run(int argc, char** argv) {
  std::string scratch = "slow_scratch";
  std::int64_t iterations = 8000;
  std::int64_t batch = 128;
  double lr = 0.1;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--scratch" && i + 1 < argc) {
      scratch = argv[++i];
    } else if (arg == "--iters" && i + 1 < argc) {
      iterations = std::strtoll(argv[++i], nullptr, 10);
    } else if (arg == "--batch" && i + 1 < argc) {
      batch = std::strtoll(argv[++i], nullptr, 10);
    } else if (arg == "--lr" && i + 1 < argc) {
      lr = std::strtod(argv[++i], nullptr);
    } else {
      std::fprintf(stderr, "usage: acceptance_slow [--scratch dir] [--iters n] "
                           "[--batch n] [--lr r]\n");
      return 2;
    }
  }

  const char* env = std::getenv("DSNET_DATA_DIR");
  const std::string data_dir = env != nullptr ? env : "data/cifar10";
  if (!fs::exists(fs::path(data_dir) / "data_batch_1.bin")) {
    std::printf("SKIP directional-training: no CIFAR-10 binaries under '%s' "
                "(set DSNET_DATA_DIR)\n",
                data_dir.c_str());
    return 77;
  }

  Dataset train_ds = load_cifar(data_dir, CifarVariant::cifar10, "train");
  Dataset val_ds = load_cifar(data_dir, CifarVariant::cifar10, "test");
  std::printf("loaded %lld train / %lld test images from %s\n",
              static_cast<long long>(train_ds.count),
              static_cast<long long>(val_ds.count), data_dir.c_str());

  fs::create_directories(scratch);
  auto run_variant = [&](Variant v) {
    std::vector<double> errors;
    for (const std::uint64_t seed : seeds) {
      NetworkConfig net_cfg = preset_config(v, 26, 0.25, StemKind::cifar, 10);
      net_cfg.seed = seed;
      TrainConfig cfg;
      cfg.iterations = iterations;
      cfg.batch = batch;
      cfg.lr = lr;
      cfg.milestones = {iterations / 2, 3 * iterations / 4};
      cfg.seed = seed;
      cfg.eval_interval = std::max<std::int64_t>(1, iterations / 8);

      auto net = build_network<float>(net_cfg);
      const std::string out = scratch + "/" + variant_name(v) + "_s" +
                              std::to_string(seed);
      TrainResult r = train_loop(net, cfg, train_ds, &val_ds, out);
      std::printf("%s seed %llu: top-1 error %.3f (top-5 %.3f), final loss %.4f\n",
                  variant_name(v).c_str(), static_cast<unsigned long long>(seed),
                  r.final_eval.top1_error, r.final_eval.top5_error, r.final_loss);
      std::fflush(stdout);
      errors.push_back(r.final_eval.top1_error);
    }
    return errors;
  };

  const std::vector<double> res = run_variant(Variant::resnet);
  const std::vector<double> ds = run_variant(Variant::dsnet);
  const double med_res = median3(res);
  const double med_ds = median3(ds);
  const bool ok = med_ds <= med_res + 0.3;
  std::printf("[7] %s  directional-training        median top-1: dsnet %.3f vs resnet "
              "%.3f (allowance +0.3)\n",
              ok ? "PASS" : "FAIL", med_ds, med_res);
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
