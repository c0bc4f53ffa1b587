#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dsnet/analysis.hpp"
#include "dsnet/checkpoint.hpp"
#include "dsnet/cifar.hpp"
#include "dsnet/common.hpp"
#include "dsnet/config_io.hpp"
#include "dsnet/equivalence.hpp"
#include "dsnet/network.hpp"
#include "dsnet/train.hpp"

namespace {

using namespace dsnet;

struct Options {
  std::string config;
  std::string variant;
  std::int64_t depth = -1;
  double width = -1;
  std::string norm;
  std::int64_t seed = -1;
  std::string data_dir;
  std::string out = "out";
  bool deterministic = false;
  std::string dataset;
  std::string stem;
  std::string precision;
  std::int64_t batch = -1;
  std::int64_t iters = -1;
  std::int64_t threads = -1;
  std::string checkpoint;
  std::int64_t trials = 8;
  std::int64_t coords = 3;
};

nlohmann::json load_config_file(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_json(buf.str(), "config file '" + path + "'");
}

// Resolution order: built-in default, then the config file, then flags.
// An explicit depth or width flag re-derives the stage plan from the preset
// table while keeping every other setting.
NetworkConfig resolve_network(const nlohmann::json& file, const Options& o,
                              StemKind default_stem, std::int64_t classes) {
  NetworkConfig cfg;
  if (file.contains("network")) {
    cfg = network_config_from_json(file.at("network"));
  } else {
    cfg = preset_config(Variant::resnet, 26, 0.25, default_stem, classes);
  }
  if (!o.variant.empty()) cfg.variant = variant_from_name(o.variant);
  if (!o.stem.empty()) cfg.stem = stem_from_name(o.stem);
  if (o.depth > 0 || o.width > 0) {
    const std::int64_t d = o.depth > 0 ? o.depth : (cfg.depth > 0 ? cfg.depth : 26);
    const double w = o.width > 0 ? o.width : cfg.width;
    NetworkConfig preset = preset_config(cfg.variant, d, w, cfg.stem, cfg.classes);
    preset.shortcut_norm = cfg.shortcut_norm;
    preset.w_init = cfg.w_init;
    preset.conv_init = cfg.conv_init;
    preset.seed = cfg.seed;
    cfg = preset;
  }
  if (!o.norm.empty()) cfg.shortcut_norm.kind = norm_kind_from_name(o.norm);
  if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
  cfg.classes = classes;
  validate_config(cfg);
  return cfg;
}

TrainConfig resolve_train(const nlohmann::json& file, const Options& o) {
  TrainConfig tc;
  if (file.contains("train")) tc = train_config_from_json(file.at("train"));
  if (!o.dataset.empty()) tc.dataset = cifar_variant_from_name(o.dataset);
  if (!o.precision.empty()) tc.precision = precision_from_name(o.precision);
  if (o.batch > 0) tc.batch = o.batch;
  if (o.iters > 0) {
    tc.iterations = o.iters;
    std::vector<std::int64_t> kept;
    for (auto m : tc.milestones) {
      if (m < tc.iterations) kept.push_back(m);
    }
    tc.milestones = kept;
  }
  if (o.seed >= 0) tc.seed = static_cast<std::uint64_t>(o.seed);
  if (o.deterministic) tc.deterministic = true;
  validate_train_config(tc);
  return tc;
}

template <typename F>
int with_precision(Precision p, F&& f) {
  if (p == Precision::f64) return f(double{});
  return f(float{});
}

void apply_threads(const Options& o) {
  if (o.threads >= 0) set_threads(static_cast<int>(o.threads));
}

int cmd_train(const Options& o) {
  if (o.data_dir.empty()) throw ConfigError("train needs --data-dir");
  const auto file = load_config_file(o.config);
  const TrainConfig tc = resolve_train(file, o);
  const NetworkConfig nc =
      resolve_network(file, o, StemKind::cifar, cifar_classes(tc.dataset));
  apply_threads(o);

  const Dataset train_ds = load_cifar(o.data_dir, tc.dataset, "train");
  const Dataset test_ds = load_cifar(o.data_dir, tc.dataset, "test");

  std::cout << "training " << variant_name(nc.variant) << " depth " << nc.depth
            << " width " << nc.width << " on " << cifar_variant_name(tc.dataset) << " ("
            << train_ds.count << " train / " << test_ds.count << " test)\n";
  std::cout << "iterations " << tc.iterations << ", batch " << tc.batch << ", seed "
            << tc.seed << ", precision " << precision_name(tc.precision) << "\n";

  return with_precision(tc.precision, [&](auto tag) {
    using T = decltype(tag);
    Network<T> net = build_network<T>(nc);
    std::cout << "parameters: " << net.params.total_elements() << "\n";
    const TrainResult r = train_loop(net, tc, train_ds, &test_ds, o.out);
    std::cout << "final loss " << r.final_loss;
    if (r.evaluated) {
      std::cout << ", val top-1 error " << r.final_eval.top1_error << "%, top-5 error "
                << r.final_eval.top5_error << "%";
    }
    std::cout << "\nmetrics: " << r.metrics_path << "\ncheckpoint: " << r.checkpoint_path
              << "\n";
    return 0;
  });
}

int cmd_eval(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
  if (o.data_dir.empty()) throw ConfigError("eval needs --data-dir");
  const Checkpoint ckpt = read_checkpoint(o.checkpoint);

  NetworkConfig nc = ckpt.network;
  nc.conv_init = ConvInit::zeros;  // every value is overwritten by the checkpoint
  TrainConfig tc = ckpt.train;
  if (!o.dataset.empty()) tc.dataset = cifar_variant_from_name(o.dataset);
  const std::int64_t batch = o.batch > 0 ? o.batch : tc.batch;
  apply_threads(o);

  const Dataset test_ds = load_cifar(o.data_dir, tc.dataset, "test");
  ChannelStats stats;
  if (ckpt.has_channel_stats) {
    stats = ckpt.channel_stats;
  } else {
    stats = compute_channel_stats(load_cifar(o.data_dir, tc.dataset, "train"));
  }

  const Precision prec = o.precision.empty() ? tc.precision : precision_from_name(o.precision);
  return with_precision(prec, [&](auto tag) {
    using T = decltype(tag);
    Network<T> net = build_network<T>(nc);
    apply_checkpoint(net, ckpt);
    const EvalResult ev = evaluate(net, test_ds, stats, batch);
    std::cout << variant_name(nc.variant) << " depth " << nc.depth << " at iteration "
              << ckpt.iteration << ": top-1 error " << ev.top1_error
              << "%, top-5 error " << ev.top5_error << "% over " << test_ds.count
              << " images\n";
    return 0;
  });
}

void print_report_row(const EquivalenceReport& r) {
  std::cout << std::left << std::setw(44) << r.case_name << std::right << std::scientific
            << std::setprecision(3) << std::setw(11) << r.max_abs_diff << "  "
            << std::setw(9) << r.tolerance << "  " << (r.pass ? "PASS" : "FAIL") << "\n"
            << std::defaultfloat;
}

int cmd_verify(const Options& o) {
  apply_threads(o);
  const std::uint64_t seed = o.seed >= 0 ? static_cast<std::uint64_t>(o.seed) : 1;
  const std::int64_t trials = o.trials;
  std::mt19937_64 rng(seed);

  std::vector<EquivalenceReport> reports;
  std::uniform_int_distribution<std::int64_t> pick_n(1, 2), pick_c(1, 4), pick_hw(5, 9),
      pick_sources(2, 4), pick_cout(1, 5);

  for (std::int64_t t = 0; t < trials; ++t) {
    const std::int64_t n = pick_n(rng), hw = pick_hw(rng), c_out = pick_cout(rng);
    const std::int64_t k = (t % 2 == 0) ? 3 : 1;
    const std::int64_t stride = (t % 3 == 0) ? 2 : 1;
    const std::int64_t pad = k == 3 ? 1 : 0;

    const std::int64_t parts = pick_sources(rng);
    std::vector<Tensor<double>> sources;
    std::int64_t total_c = 0;
    for (std::int64_t p = 0; p < parts; ++p) {
      const std::int64_t c = pick_c(rng);
      Tensor<double> s(Shape{n, c, hw, hw});
      fill_randn(s, rng, 1.0);
      sources.push_back(s);
      total_c += c;
    }
    Tensor<double> kernel(Shape{c_out, total_c, k, k});
    fill_randn(kernel, rng, 1.0);
    auto r1 = verify_concat_sum_equivalence(sources, kernel, stride, pad);
    r1.case_name = "concat-sum trial " + std::to_string(t + 1) + " (" +
                   std::to_string(parts) + " sources, k=" + std::to_string(k) + ")";
    reports.push_back(r1);

    const std::int64_t c = pick_c(rng);
    std::vector<Tensor<double>> same;
    for (std::int64_t p = 0; p < parts; ++p) {
      Tensor<double> s(Shape{n, c, hw, hw});
      fill_randn(s, rng, 1.0);
      same.push_back(s);
    }
    Tensor<double> shared(Shape{c_out, c, k, k});
    fill_randn(shared, rng, 1.0);
    auto r2 = verify_shared_weight_equivalence(same, shared, stride, pad);
    r2.case_name = "shared-weight trial " + std::to_string(t + 1) + " (" +
                   std::to_string(parts) + " sources, k=" + std::to_string(k) + ")";
    reports.push_back(r2);
  }

  for (std::int64_t l = 1; l <= 10; ++l) {
    const auto got = expand_dense_identity_coefficients(l);
    std::vector<std::int64_t> want(static_cast<std::size_t>(l) + 1, 0);
    want[0] = std::int64_t{1} << (l - 1);
    for (std::int64_t i = 1; i < l; ++i) {
      want[static_cast<std::size_t>(i)] = std::int64_t{1} << (l - 1 - i);
    }
    want[static_cast<std::size_t>(l)] = 1;
    double diff = 0;
    for (std::size_t i = 0; i < want.size(); ++i) {
      diff = std::max(diff, std::abs(static_cast<double>(got[i] - want[i])));
    }
    reports.push_back(make_report("identity coefficients l=" + std::to_string(l), diff, 0.0));
  }

  bool all_pass = true;
  std::cout << std::left << std::setw(44) << "case" << std::right << std::setw(11)
            << "max diff" << "  " << std::setw(9) << "tol" << "  result\n";
  for (const auto& r : reports) {
    print_report_row(r);
    all_pass = all_pass && r.pass;
  }
  std::cout << (all_pass ? "all checks passed" : "VERIFICATION FAILED") << "\n";
  return all_pass ? 0 : 1;
}

int cmd_gradcheck(const Options& o) {
  apply_threads(o);
  const std::uint64_t seed = o.seed >= 0 ? static_cast<std::uint64_t>(o.seed) : 7;
  const std::int64_t coords = o.coords;
  const double h = 1e-5, tol = 1e-4;

  std::vector<Variant> variants;
  if (o.variant.empty() || o.variant == "all") {
    variants = {Variant::resnet, Variant::resnet_dense, Variant::dsnet_a, Variant::dsnet,
                Variant::ds2net};
  } else {
    variants = {variant_from_name(o.variant)};
  }

  bool all_pass = true;
  for (const auto v : variants) {
    NetworkConfig cfg = custom_config(v, {{2, 8}, {2, 8}}, StemKind::cifar, 10);
    cfg.seed = seed;
    if (!o.norm.empty()) cfg.shortcut_norm.kind = norm_kind_from_name(o.norm);
    Network<double> net = build_network<double>(cfg);
    auto r = gradient_check(net, coords, h, tol, seed);
    print_report_row(r);
    all_pass = all_pass && r.pass;
  }
  std::cout << (all_pass ? "gradient check passed" : "GRADIENT CHECK FAILED") << "\n";
  return all_pass ? 0 : 1;
}

int cmd_analyze(const Options& o, bool csv) {
  const std::int64_t depth = o.depth > 0 ? o.depth : 50;
  const double width = o.width > 0 ? o.width : 1.0;
  const StemKind stem = o.stem.empty() ? StemKind::imagenet : stem_from_name(o.stem);
  const std::int64_t classes = stem == StemKind::imagenet ? 1000 : 10;
  const std::int64_t input_hw = stem == StemKind::imagenet ? 224 : 32;
  const std::int64_t mem_batch = o.batch > 0 ? o.batch : 128;

  const std::vector<Variant> variants = {Variant::resnet, Variant::resnet_dense,
                                         Variant::dsnet_a, Variant::dsnet,
                                         Variant::ds2net};
  if (csv) {
    std::cout << "variant,depth,width,params,shortcut_params,gflops,activation_mb\n";
  } else {
    std::cout << std::left << std::setw(14) << "variant" << std::right << std::setw(7)
              << "depth" << std::setw(7) << "width" << std::setw(13) << "params"
              << std::setw(11) << "shortcut" << std::setw(9) << "GFLOPs" << std::setw(10)
              << "act MB" << "\n";
  }
  for (const auto v : variants) {
    NetworkConfig cfg = preset_config(v, depth, width, stem, classes);
    if (!o.norm.empty()) cfg.shortcut_norm.kind = norm_kind_from_name(o.norm);
    const ResourceReport p = count_parameters(cfg);
    const ResourceReport f = count_flops(cfg, 1, input_hw, input_hw);
    const double gflops = static_cast<double>(f.macs) / 1e9;
    const double act_mb =
        static_cast<double>(estimate_activation_memory(cfg, mem_batch, 4)) / 1e6;
    if (csv) {
      std::cout << variant_name(cfg.variant) << ',' << depth << ',' << width << ','
                << p.total_params() << ',' << p.shortcut_params << ',' << std::fixed
                << std::setprecision(3) << gflops << ',' << std::setprecision(1)
                << act_mb << std::defaultfloat << "\n";
    } else {
      std::cout << std::left << std::setw(14) << variant_name(cfg.variant) << std::right
                << std::setw(7) << depth << std::setw(7) << width << std::setw(13)
                << p.total_params() << std::setw(11) << p.shortcut_params << std::fixed
                << std::setw(9) << std::setprecision(3) << gflops << std::setw(10)
                << std::setprecision(1) << act_mb << std::defaultfloat << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dense weighted normalized shortcut networks"};
  app.require_subcommand(1);

  Options o;
  bool analyze_csv = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "JSON config file");
    cmd->add_option("--variant", o.variant,
                    "ResNet, ResNet-dense, DSNet-a, DSNet, DS2Net");
    cmd->add_option("--depth", o.depth, "preset depth (26, 38, 50, 77, 101)");
    cmd->add_option("--width", o.width, "width multiplier (0.25, 0.5, 1.0)");
    cmd->add_option("--norm", o.norm, "shortcut normalization: batch, group, layer, instance, none");
    cmd->add_option("--seed", o.seed, "experiment seed");
    cmd->add_option("--data-dir", o.data_dir, "directory of CIFAR binary files");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_flag("--deterministic", o.deterministic, "single thread, bitwise reproducible");
    cmd->add_option("--dataset", o.dataset, "cifar10 or cifar100");
    cmd->add_option("--stem", o.stem, "cifar or imagenet input stem");
    cmd->add_option("--precision", o.precision, "f32 or f64");
    cmd->add_option("--batch", o.batch, "batch size");
    cmd->add_option("--iters", o.iters, "training iterations");
    cmd->add_option("--threads", o.threads, "worker threads (0 = hardware)");
  };

  auto* train = app.add_subcommand("train", "train a model on CIFAR");
  add_common(train);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval);
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint file to evaluate");
  auto* verify = app.add_subcommand("verify", "check the shortcut equivalence identities");
  add_common(verify);
  verify->add_option("--trials", o.trials, "fuzz trials per identity");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common(gradcheck);
  gradcheck->add_option("--coords", o.coords, "coordinates probed per parameter");
  auto* analyze = app.add_subcommand("analyze", "parameter and compute accounting");
  add_common(analyze);
  analyze->add_flag("--csv", analyze_csv, "machine-readable output");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(o);
    if (eval->parsed()) return cmd_eval(o);
    if (verify->parsed()) return cmd_verify(o);
    if (gradcheck->parsed()) return cmd_gradcheck(o);
    if (analyze->parsed()) return cmd_analyze(o, analyze_csv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
