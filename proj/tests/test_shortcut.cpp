#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "dsnet/gradcheck.hpp"
#include "dsnet/shortcut.hpp"

using namespace dsnet;

namespace {

NormSpec shortcut_spec(NormKind kind = NormKind::group) {
  NormSpec s;
  s.kind = kind;
  s.affine = false;
  return s;
}

Tensor<double> randn(Shape s, std::mt19937_64& rng, double sd = 1.0) {
  Tensor<double> t(s);
  fill_randn(t, rng, sd);
  return t;
}

}  // namespace

TEST_CASE("one source requested by three consumers normalizes once") {
  std::mt19937_64 rng(31);
  auto src = randn(Shape{2, 4, 5, 5}, rng);
  AggregationCache<double> cache(shortcut_spec(), NormMode::train);
  cache.register_source(0, src, nullptr);

  const auto& a = cache.normalized(0);
  const auto& b = cache.normalized(0);
  const auto& c = cache.normalized(0);
  REQUIRE(cache.normalize_runs() == 1);
  REQUIRE(cache.requests() == 3);
  REQUIRE(cache.consumed_sources() == 1);
  REQUIRE(a.storage() == b.storage());
  REQUIRE(b.storage() == c.storage());

  auto direct = normalize<double>(src, shortcut_spec(), nullptr, NormMode::train);
  for (std::int64_t i = 0; i < src.numel(); ++i) {
    REQUIRE(a.data()[i] == direct.data()[i]);
  }
}

TEST_CASE("registered but never consumed sources cost nothing") {
  std::mt19937_64 rng(32);
  AggregationCache<double> cache(shortcut_spec(), NormMode::train);
  cache.register_source(0, randn(Shape{1, 2, 3, 3}, rng), nullptr);
  cache.register_source(1, randn(Shape{1, 2, 3, 3}, rng), nullptr);
  cache.normalized(0);
  REQUIRE(cache.normalize_runs() == 1);
  REQUIRE(cache.consumed_sources() == 1);
}

TEST_CASE("cache rejects duplicate and unknown sources") {
  std::mt19937_64 rng(33);
  AggregationCache<double> cache(shortcut_spec(), NormMode::train);
  auto src = randn(Shape{1, 2, 3, 3}, rng);
  cache.register_source(0, src, nullptr);
  REQUIRE_THROWS_AS(cache.register_source(0, src, nullptr), ConfigError);
  REQUIRE_THROWS_AS(cache.normalized(5), ConfigError);
}

TEST_CASE("ds_apply is a per-channel scale") {
  std::mt19937_64 rng(34);
  auto src = randn(Shape{2, 3, 4, 4}, rng);

  auto ones = Tensor<double>::ones(Shape{1, 3, 1, 1});
  auto id = ds_apply(src, ones);
  for (std::int64_t i = 0; i < src.numel(); ++i) REQUIRE(id.data()[i] == src.data()[i]);

  auto zeros = Tensor<double>::zeros(Shape{1, 3, 1, 1});
  auto none = ds_apply(src, zeros);
  for (std::int64_t i = 0; i < src.numel(); ++i) REQUIRE(none.data()[i] == 0.0);

  auto w = Tensor<double>::from(Shape{1, 3, 1, 1}, {2.0, -1.0, 0.5});
  auto scaled = ds_apply(src, w);
  for (std::int64_t n = 0; n < 2; ++n) {
    for (std::int64_t c = 0; c < 3; ++c) {
      for (std::int64_t h = 0; h < 4; ++h) {
        for (std::int64_t ww = 0; ww < 4; ++ww) {
          REQUIRE(scaled.at(n, c, h, ww) == src.at(n, c, h, ww) * w.at(0, c, 0, 0));
        }
      }
    }
  }
}

TEST_CASE("aggregate matches a hand-built weighted sum of normalized sources") {
  std::mt19937_64 rng(35);
  const Shape shape{2, 4, 5, 5};
  auto own = randn(shape, rng);
  auto s0 = randn(shape, rng);
  auto s1 = randn(shape, rng);
  auto w0 = randn(Shape{1, 4, 1, 1}, rng);
  auto w1 = randn(Shape{1, 4, 1, 1}, rng);

  AggregationCache<double> cache(shortcut_spec(), NormMode::train);
  cache.register_source(0, s0, nullptr);
  cache.register_source(1, s1, nullptr);
  auto got = aggregate_block_input(own, cache, {{0, w0}, {1, w1}});

  auto n0 = normalize<double>(s0, shortcut_spec(), nullptr, NormMode::train);
  auto n1 = normalize<double>(s1, shortcut_spec(), nullptr, NormMode::train);
  for (std::int64_t n = 0; n < 2; ++n) {
    for (std::int64_t c = 0; c < 4; ++c) {
      for (std::int64_t h = 0; h < 5; ++h) {
        for (std::int64_t w = 0; w < 5; ++w) {
          const double want = own.at(n, c, h, w) + w0.at(0, c, 0, 0) * n0.at(n, c, h, w) +
                              w1.at(0, c, 0, 0) * n1.at(n, c, h, w);
          REQUIRE(std::abs(got.at(n, c, h, w) - want) <= 1e-12);
        }
      }
    }
  }
  REQUIRE(cache.normalize_runs() == 2);
  REQUIRE(cache.requests() == 2);
}

TEST_CASE("zero weights reduce the aggregate to the bare path exactly") {
  std::mt19937_64 rng(36);
  const Shape shape{1, 4, 4, 4};
  auto own = randn(shape, rng);
  AggregationCache<double> cache(shortcut_spec(), NormMode::train);
  cache.register_source(0, randn(shape, rng), nullptr);
  cache.register_source(1, randn(shape, rng), nullptr);
  auto zero = Tensor<double>::zeros(Shape{1, 4, 1, 1});
  auto got = aggregate_block_input(own, cache, {{0, zero}, {1, zero}});
  for (std::int64_t i = 0; i < own.numel(); ++i) {
    REQUIRE(got.data()[i] == own.data()[i]);
  }
}

TEST_CASE("the aggregate is linear in the shortcut weights") {
  std::mt19937_64 rng(37);
  const Shape shape{1, 3, 4, 4};
  auto own = randn(shape, rng);
  auto src = randn(shape, rng);
  auto w = randn(Shape{1, 3, 1, 1}, rng);
  Tensor<double> w2(Shape{1, 3, 1, 1});
  for (std::int64_t i = 0; i < 3; ++i) w2.data()[i] = 2.0 * w.data()[i];

  AggregationCache<double> c1(shortcut_spec(), NormMode::train);
  c1.register_source(0, src, nullptr);
  auto a1 = aggregate_block_input(own, c1, {{0, w}});
  AggregationCache<double> c2(shortcut_spec(), NormMode::train);
  c2.register_source(0, src, nullptr);
  auto a2 = aggregate_block_input(own, c2, {{0, w2}});

  for (std::int64_t i = 0; i < own.numel(); ++i) {
    const double t1 = a1.data()[i] - own.data()[i];
    const double t2 = a2.data()[i] - own.data()[i];
    REQUIRE(std::abs(t2 - 2.0 * t1) <= 1e-12);
  }
}

TEST_CASE("naive dense sum adds the whole history") {
  std::mt19937_64 rng(38);
  const Shape shape{2, 3, 4, 4};
  auto x = randn(shape, rng);

  auto empty = naive_dense_identity_sum<double>({}, x);
  for (std::int64_t i = 0; i < x.numel(); ++i) REQUIRE(empty.data()[i] == x.data()[i]);

  auto y0 = randn(shape, rng);
  auto y1 = randn(shape, rng);
  auto y2 = randn(shape, rng);
  auto got = naive_dense_identity_sum<double>({y0, y1, y2}, x);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double want = x.data()[i] + y0.data()[i] + y1.data()[i] + y2.data()[i];
    REQUIRE(std::abs(got.data()[i] - want) <= 1e-12);
  }
}

TEST_CASE("gradients flow through the shared cache to weights and sources") {
  std::mt19937_64 rng(39);
  const Shape shape{2, 3, 4, 4};
  auto own = randn(shape, rng);
  auto src = randn(shape, rng);
  auto wa = randn(Shape{1, 3, 1, 1}, rng);
  auto wb = randn(Shape{1, 3, 1, 1}, rng);
  src.make_leaf();
  wa.make_leaf();
  wb.make_leaf();

  // the same source feeds two consumers, so its gradient must gather both paths
  auto run = [&] {
    AggregationCache<double> cache(shortcut_spec(), NormMode::train);
    cache.register_source(0, src, nullptr);
    auto first = aggregate_block_input(own, cache, {{0, wa}});
    auto second = aggregate_block_input(relu(first), cache, {{0, wb}});
    return sum(second);
  };
  auto loss = run();
  backward(loss);
  auto gsrc = src.grad();
  auto gwa = wa.grad();
  auto gwb = wb.grad();

  auto loss_fn = [&] {
    NoGradGuard guard;
    return run().vec()[0];
  };
  REQUIRE(max_relative_error(gsrc, finite_diff_gradient<double>(loss_fn, src, 1e-6)) <= 1e-6);
  REQUIRE(max_relative_error(gwa, finite_diff_gradient<double>(loss_fn, wa, 1e-6)) <= 1e-6);
  REQUIRE(max_relative_error(gwb, finite_diff_gradient<double>(loss_fn, wb, 1e-6)) <= 1e-6);
}

TEST_CASE("a cache with no normalization hands back the source itself") {
  std::mt19937_64 rng(40);
  auto src = randn(Shape{1, 2, 3, 3}, rng);
  AggregationCache<double> cache(shortcut_spec(NormKind::none), NormMode::train);
  cache.register_source(0, src, nullptr);
  REQUIRE(cache.normalized(0).storage() == src.storage());
}
