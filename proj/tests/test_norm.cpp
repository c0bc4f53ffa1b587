#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "dsnet/gradcheck.hpp"
#include "dsnet/norm.hpp"
#include "dsnet/ops.hpp"

using namespace dsnet;

namespace {

NormSpec spec_of(NormKind kind, std::int64_t groups = 0) {
  NormSpec s;
  s.kind = kind;
  s.affine = false;
  s.groups = groups;
  return s;
}

// Mean and biased variance over an arbitrary index set.
template <typename Pick>
std::pair<double, double> moments(const Tensor<double>& t, std::int64_t count, Pick pick) {
  double sum = 0, sumsq = 0;
  for (std::int64_t i = 0; i < count; ++i) {
    const double v = pick(i);
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / static_cast<double>(count);
  return {mean, sumsq / static_cast<double>(count) - mean * mean};
}

}  // namespace

TEST_CASE("resolve_groups picks the largest divisor not above 32") {
  REQUIRE(resolve_groups(1) == 1);
  REQUIRE(resolve_groups(8) == 8);
  REQUIRE(resolve_groups(32) == 32);
  REQUIRE(resolve_groups(64) == 32);
  REQUIRE(resolve_groups(30) == 30);
  REQUIRE(resolve_groups(34) == 17);
  REQUIRE(resolve_groups(33) == 11);
  REQUIRE(resolve_groups(37) == 1);  // prime above 32 falls back to one group
}

TEST_CASE("normalized units have zero mean and unit variance") {
  std::mt19937_64 rng(21);
  Tensor<double> x(Shape{3, 8, 5, 5});
  fill_randn(x, rng, 100.0);  // large scale keeps the eps bias below the tolerance

  SECTION("group units") {
    auto y = normalize<double>(x, spec_of(NormKind::group, 4), nullptr, NormMode::train);
    const std::int64_t per = 2 * 25;
    for (std::int64_t n = 0; n < 3; ++n) {
      for (std::int64_t g = 0; g < 4; ++g) {
        auto [mean, var] = moments(y, per, [&](std::int64_t i) {
          const std::int64_t c = g * 2 + i / 25;
          return y.at(n, c, (i % 25) / 5, i % 5);
        });
        REQUIRE(std::abs(mean) <= 1e-10);
        REQUIRE(std::abs(var - 1.0) <= 1e-5);
      }
    }
  }

  SECTION("layer units") {
    auto y = normalize<double>(x, spec_of(NormKind::layer), nullptr, NormMode::train);
    const std::int64_t per = 8 * 25;
    for (std::int64_t n = 0; n < 3; ++n) {
      auto [mean, var] = moments(y, per, [&](std::int64_t i) {
        return y.at(n, i / 25, (i % 25) / 5, i % 5);
      });
      REQUIRE(std::abs(mean) <= 1e-10);
      REQUIRE(std::abs(var - 1.0) <= 1e-5);
    }
  }

  SECTION("instance units") {
    auto y = normalize<double>(x, spec_of(NormKind::instance), nullptr, NormMode::train);
    for (std::int64_t n = 0; n < 3; ++n) {
      for (std::int64_t c = 0; c < 8; ++c) {
        auto [mean, var] = moments(y, 25, [&](std::int64_t i) {
          return y.at(n, c, i / 5, i % 5);
        });
        REQUIRE(std::abs(mean) <= 1e-10);
        REQUIRE(std::abs(var - 1.0) <= 1e-5);
      }
    }
  }

  SECTION("batch channels") {
    NormState<double> state;
    auto y = normalize<double>(x, spec_of(NormKind::batch), &state, NormMode::train);
    const std::int64_t per = 3 * 25;
    for (std::int64_t c = 0; c < 8; ++c) {
      auto [mean, var] = moments(y, per, [&](std::int64_t i) {
        return y.at(i / 25, c, (i % 25) / 5, i % 5);
      });
      REQUIRE(std::abs(mean) <= 1e-10);
      REQUIRE(std::abs(var - 1.0) <= 1e-5);
    }
  }
}

TEST_CASE("group with one group is layer, group with c groups is instance") {
  std::mt19937_64 rng(22);
  Tensor<double> x(Shape{2, 6, 4, 4});
  fill_randn(x, rng, 1.0);

  auto g1 = normalize<double>(x, spec_of(NormKind::group, 1), nullptr, NormMode::train);
  auto ln = normalize<double>(x, spec_of(NormKind::layer), nullptr, NormMode::train);
  auto gc = normalize<double>(x, spec_of(NormKind::group, 6), nullptr, NormMode::train);
  auto in = normalize<double>(x, spec_of(NormKind::instance), nullptr, NormMode::train);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    REQUIRE(std::abs(g1.data()[i] - ln.data()[i]) <= 1e-12);
    REQUIRE(std::abs(gc.data()[i] - in.data()[i]) <= 1e-12);
  }
}

TEST_CASE("normalization is invariant to input scale") {
  std::mt19937_64 rng(23);
  Tensor<double> x(Shape{2, 4, 6, 6});
  fill_randn(x, rng, 100.0);

  for (const double alpha : {0.5, 3.0}) {
    Tensor<double> scaled(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) scaled.data()[i] = alpha * x.data()[i];
    for (const auto kind : {NormKind::group, NormKind::layer, NormKind::instance}) {
      auto a = normalize<double>(x, spec_of(kind), nullptr, NormMode::train);
      auto b = normalize<double>(scaled, spec_of(kind), nullptr, NormMode::train);
      for (std::int64_t i = 0; i < x.numel(); ++i) {
        REQUIRE(std::abs(a.data()[i] - b.data()[i]) <= 1e-8);
      }
    }
    NormState<double> s1, s2;
    auto a = normalize<double>(x, spec_of(NormKind::batch), &s1, NormMode::train);
    auto b = normalize<double>(scaled, spec_of(NormKind::batch), &s2, NormMode::train);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      REQUIRE(std::abs(a.data()[i] - b.data()[i]) <= 1e-8);
    }
  }
}

TEST_CASE("constant input normalizes to zeros") {
  auto x = Tensor<double>::full(Shape{2, 4, 3, 3}, 7.25);
  for (const auto kind : {NormKind::group, NormKind::layer, NormKind::instance}) {
    auto y = normalize<double>(x, spec_of(kind), nullptr, NormMode::train);
    for (std::int64_t i = 0; i < y.numel(); ++i) REQUIRE(y.data()[i] == 0.0);
  }
  NormState<double> state;
  auto y = normalize<double>(x, spec_of(NormKind::batch), &state, NormMode::train);
  for (std::int64_t i = 0; i < y.numel(); ++i) REQUIRE(y.data()[i] == 0.0);
}

TEST_CASE("none is a passthrough sharing storage") {
  Tensor<double> x(Shape{1, 2, 2, 2});
  auto y = normalize<double>(x, spec_of(NormKind::none), nullptr, NormMode::train);
  REQUIRE(y.storage() == x.storage());
}

TEST_CASE("batch running statistics follow the update rule") {
  std::mt19937_64 rng(24);
  Tensor<double> b1(Shape{4, 2, 3, 3});
  Tensor<double> b2(Shape{4, 2, 3, 3});
  fill_randn(b1, rng, 1.0);
  fill_randn(b2, rng, 2.0);

  auto batch_moments = [](const Tensor<double>& t, std::int64_t c) {
    double sum = 0, sumsq = 0;
    std::int64_t count = 0;
    for (std::int64_t n = 0; n < t.shape().n; ++n) {
      for (std::int64_t h = 0; h < t.shape().h; ++h) {
        for (std::int64_t w = 0; w < t.shape().w; ++w) {
          const double v = t.at(n, c, h, w);
          sum += v;
          sumsq += v * v;
          ++count;
        }
      }
    }
    const double mean = sum / count;
    return std::pair<double, double>{mean, sumsq / count - mean * mean};
  };

  NormState<double> state;
  normalize<double>(b1, spec_of(NormKind::batch), &state, NormMode::train);
  REQUIRE(state.initialized);
  for (std::int64_t c = 0; c < 2; ++c) {
    auto [m, v] = batch_moments(b1, c);
    REQUIRE(std::abs(state.running_mean[c] - m) <= 1e-12);
    REQUIRE(std::abs(state.running_var[c] - v) <= 1e-12);
  }

  const std::vector<double> prev_mean = state.running_mean;
  const std::vector<double> prev_var = state.running_var;
  normalize<double>(b2, spec_of(NormKind::batch), &state, NormMode::train);
  for (std::int64_t c = 0; c < 2; ++c) {
    auto [m, v] = batch_moments(b2, c);
    REQUIRE(std::abs(state.running_mean[c] - (0.9 * prev_mean[c] + 0.1 * m)) <= 1e-12);
    REQUIRE(std::abs(state.running_var[c] - (0.9 * prev_var[c] + 0.1 * v)) <= 1e-12);
  }
}

TEST_CASE("batch evaluation uses frozen statistics") {
  NormState<double> state;
  state.running_mean = {1.0, -2.0};
  state.running_var = {4.0, 0.25};
  state.initialized = true;

  auto x = Tensor<double>::from(Shape{1, 2, 1, 2}, {3.0, 5.0, -1.0, -3.0});
  auto y = normalize<double>(x, spec_of(NormKind::batch), &state, NormMode::eval);
  const double eps = 1e-5;
  REQUIRE(std::abs(y.at(0, 0, 0, 0) - (3.0 - 1.0) / std::sqrt(4.0 + eps)) <= 1e-12);
  REQUIRE(std::abs(y.at(0, 0, 0, 1) - (5.0 - 1.0) / std::sqrt(4.0 + eps)) <= 1e-12);
  REQUIRE(std::abs(y.at(0, 1, 0, 0) - (-1.0 + 2.0) / std::sqrt(0.25 + eps)) <= 1e-12);
  REQUIRE(std::abs(y.at(0, 1, 0, 1) - (-3.0 + 2.0) / std::sqrt(0.25 + eps)) <= 1e-12);

  // statistics must not move in evaluation mode
  REQUIRE(state.running_mean[0] == 1.0);
  REQUIRE(state.running_var[1] == 0.25);
}

TEST_CASE("batch evaluation without statistics is an error") {
  Tensor<double> x(Shape{1, 2, 2, 2});
  NormState<double> state;
  REQUIRE_THROWS_AS(
      normalize<double>(x, spec_of(NormKind::batch), &state, NormMode::eval), TrainError);
}

TEST_CASE("batch normalization without a state is a configuration error") {
  Tensor<double> x(Shape{1, 2, 2, 2});
  REQUIRE_THROWS_AS(normalize<double>(x, spec_of(NormKind::batch), nullptr, NormMode::train),
                    ConfigError);
}

TEST_CASE("group count must divide the channel count") {
  Tensor<double> x(Shape{1, 6, 2, 2});
  REQUIRE_THROWS_AS(
      normalize<double>(x, spec_of(NormKind::group, 4), nullptr, NormMode::train),
      ConfigError);
}

TEST_CASE("running statistics shape mismatch is caught") {
  std::mt19937_64 rng(25);
  Tensor<double> a(Shape{2, 3, 2, 2});
  Tensor<double> b(Shape{2, 4, 2, 2});
  fill_randn(a, rng, 1.0);
  fill_randn(b, rng, 1.0);
  NormState<double> state;
  normalize<double>(a, spec_of(NormKind::batch), &state, NormMode::train);
  REQUIRE_THROWS_AS(normalize<double>(b, spec_of(NormKind::batch), &state, NormMode::train),
                    ShapeError);
}

TEST_CASE("normalization gradients match finite differences") {
  std::mt19937_64 rng(26);
  Tensor<double> gamma(Shape{1, 4, 1, 1});
  fill_randn(gamma, rng, 1.0);

  auto check = [&](NormKind kind) {
    Tensor<double> x(Shape{2, 4, 3, 3});
    fill_randn(x, rng, 1.0);
    x.make_leaf();
    NormState<double> state;
    auto run = [&] {
      NormState<double> fresh = state;  // keep running stats out of the measurement
      return sum(channelwise_scale(
          normalize<double>(x, spec_of(kind), &fresh, NormMode::train), gamma));
    };
    auto loss = run();
    backward(loss);
    auto gx = x.grad();
    auto loss_fn = [&] {
      NoGradGuard guard;
      return run().vec()[0];
    };
    REQUIRE(max_relative_error(gx, finite_diff_gradient<double>(loss_fn, x, 1e-6)) <= 1e-6);
  };
  check(NormKind::group);
  check(NormKind::layer);
  check(NormKind::instance);
  check(NormKind::batch);

  // evaluation-mode batch backward is a fixed rescale
  NormState<double> state;
  state.running_mean = {0.5, -0.5, 1.0, 0.0};
  state.running_var = {1.0, 4.0, 0.25, 9.0};
  state.initialized = true;
  Tensor<double> x(Shape{2, 4, 3, 3});
  fill_randn(x, rng, 1.0);
  x.make_leaf();
  auto loss = sum(channelwise_scale(
      normalize<double>(x, spec_of(NormKind::batch), &state, NormMode::eval), gamma));
  backward(loss);
  auto gx = x.grad();
  auto loss_fn = [&] {
    NoGradGuard guard;
    return sum(channelwise_scale(
                   normalize<double>(x, spec_of(NormKind::batch), &state, NormMode::eval),
                   gamma))
        .vec()[0];
  };
  REQUIRE(max_relative_error(gx, finite_diff_gradient<double>(loss_fn, x, 1e-6)) <= 1e-6);
}
