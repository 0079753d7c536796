#include <gtest/gtest.h>

#include <cmath>

#include "fedrelu/network.hpp"
#include "support/oracles.hpp"

using namespace fedrelu;
using namespace fedrelu::network;
using fedrelu::testing::dataset_from;
using fedrelu::testing::finite_difference_gradient;
using fedrelu::testing::iota_indices;
using fedrelu::testing::loop_loss;
using fedrelu::testing::max_abs;
using fedrelu::testing::max_abs_diff;
using fedrelu::testing::params_from;

namespace {

data::Dataset random_dataset(std::size_t n, std::size_t d, std::size_t o, std::uint64_t seed) {
  RngStream rng(seed, streams::kData), teacher(seed, streams::kTeacher);
  return data::gen_separable({n, d, o, 0.0, 1.0}, rng, teacher);
}

Params random_params(const NetConfig& cfg, std::uint64_t seed) {
  RngStream rng(seed, streams::kInit);
  return init_params(cfg, rng);
}

}  // namespace

TEST(Forward, HandComputedSingleLayer) {
  const Params p = params_from({Matrix{{1, 0}, {0, -1}}}, Matrix{{1, 1}});
  const std::vector<double> x{1, 0};
  const ForwardTrace t = forward(p, x);
  ASSERT_EQ(t.output.size(), 1u);
  EXPECT_EQ(t.output[0], 1.0);
  // z = (1, 0): the zero unit counts as active.
  EXPECT_EQ(t.patterns[0], (std::vector<bool>{true, true}));
  EXPECT_EQ(t.activations[0], x);
  EXPECT_EQ(t.activations[1], (std::vector<double>{1, 0}));
}

TEST(Forward, NegativePreactivationIsMasked) {
  const Params p = params_from({Matrix{{1, 0}, {0, -1}}}, Matrix{{1, 1}});
  const ForwardTrace t = forward(p, std::vector<double>{0, 1});
  EXPECT_EQ(t.patterns[0], (std::vector<bool>{true, false}));
  EXPECT_EQ(t.output[0], 0.0);
}

TEST(Forward, ZeroWeightsActivateEveryUnit) {
  const Params p = params_from({Matrix(3, 2), Matrix(3, 3)}, Matrix(1, 3, 1.0));
  const ForwardTrace t = forward(p, std::vector<double>{0.6, 0.8});
  for (const auto& layer : t.patterns)
    for (bool b : layer) EXPECT_TRUE(b);
  EXPECT_EQ(t.output[0], 0.0);
}

TEST(Forward, PositiveHomogeneity) {
  const NetConfig cfg{3, 16, 5, 2};
  const Params p = random_params(cfg, 1);
  const std::vector<double> x{0.2, -0.4, 0.4, 0.8, 0.0};
  std::vector<double> x3 = x;
  for (double& v : x3) v *= 3.0;
  const ForwardTrace a = forward(p, x);
  const ForwardTrace b = forward(p, x3);
  for (std::size_t r = 0; r < 2; ++r) EXPECT_NEAR(b.output[r], 3.0 * a.output[r], 1e-12);
  EXPECT_EQ(a.patterns, b.patterns);
}

TEST(Forward, OutputRebuiltFromPatterns) {
  const NetConfig cfg{4, 24, 6, 3};
  const Params p = random_params(cfg, 2);
  const data::Dataset ds = random_dataset(5, 6, 3, 2);
  for (const auto& e : ds.examples) {
    const ForwardTrace t = forward(p, e.x);
    EXPECT_EQ(output_from_patterns(p, t, e.x), t.output);
  }
}

TEST(Forward, BatchMatchesSingleExample) {
  const NetConfig cfg{2, 12, 4, 2};
  const Params p = random_params(cfg, 3);
  const data::Dataset ds = random_dataset(7, 4, 2, 3);
  const data::Shard shard(ds, iota_indices(7), 0);
  const BatchTrace bt = forward_batch(p, shard.inputs());
  for (std::size_t j = 0; j < 7; ++j) {
    const ForwardTrace t = forward(p, shard.input(j));
    for (std::size_t r = 0; r < 2; ++r) EXPECT_NEAR(bt.output(r, j), t.output[r], 1e-14);
  }
  EXPECT_GT(min_abs_preactivation(bt), 0.0);
}

TEST(Forward, DimensionMismatch) {
  const Params p = random_params({1, 4, 3, 1}, 4);
  EXPECT_THROW(forward(p, std::vector<double>{1, 0}), ShapeError);
}

TEST(Loss, HandComputedHalf) {
  const Params p = params_from({Matrix{{1, 0}, {0, -1}}}, Matrix{{1, 1}});
  const data::Dataset ds = dataset_from({{1, 0}}, {{0}});
  const data::Shard shard(ds, {0}, 0);
  EXPECT_EQ(loss(p, shard), 0.5);
}

TEST(Loss, MatchesLoopOracle) {
  const NetConfig cfg{3, 20, 6, 3};
  const Params p = random_params(cfg, 5);
  const data::Dataset ds = random_dataset(9, 6, 3, 5);
  const data::Shard shard(ds, iota_indices(9), 0);
  EXPECT_NEAR(loss(p, shard), loop_loss(p, shard), 1e-15 * std::max(1.0, loop_loss(p, shard)));
}

TEST(Loss, EmptyShardRejected) {
  const Params p = random_params({1, 4, 2, 1}, 6);
  const data::Dataset ds = dataset_from({{1, 0}}, {{0}});
  const data::Shard empty(ds, {}, 0);
  EXPECT_THROW(loss(p, empty), ArgumentError);
}

TEST(Gradient, ZeroResidualGivesZeroGradient) {
  const NetConfig cfg{2, 8, 3, 2};
  const Params p = random_params(cfg, 7);
  data::Dataset ds = random_dataset(4, 3, 2, 7);
  for (auto& e : ds.examples) e.y = forward(p, e.x).output;
  const data::Shard shard(ds, iota_indices(4), 0);
  const LossAndGrad lg = loss_and_gradient(p, shard);
  EXPECT_EQ(lg.loss, 0.0);
  for (const Matrix& g : lg.grad.layers) EXPECT_EQ(max_abs(g), 0.0);
}

TEST(Gradient, SingleUnitSymbolic) {
  // f = v relu(w . x); dL/dw = (f - y) v x for an active unit.
  const Params p = params_from({Matrix{{0.5, 0.25}}}, Matrix{{2.0}});
  const data::Dataset ds = dataset_from({{0.6, 0.8}}, {{1.0}});
  const data::Shard shard(ds, {0}, 0);
  const double f = 2.0 * (0.5 * 0.6 + 0.25 * 0.8);
  const ParamGrad g = gradient(p, shard);
  EXPECT_DOUBLE_EQ(g.layers[0](0, 0), (f - 1.0) * 2.0 * 0.6);
  EXPECT_DOUBLE_EQ(g.layers[0](0, 1), (f - 1.0) * 2.0 * 0.8);
}

TEST(Gradient, MatchesFiniteDifferences) {
  const NetConfig cfg{3, 16, 6, 3};
  const Params p = random_params(cfg, 8);
  const data::Dataset ds = random_dataset(4, 6, 3, 8);
  const data::Shard shard(ds, iota_indices(4), 0);
  ASSERT_GT(min_abs_preactivation(forward_batch(p, shard.inputs())), 1e-4);
  const ParamGrad g = gradient(p, shard);
  const auto fd = finite_difference_gradient(p, shard, 1e-6);
  for (std::size_t l = 0; l < 3; ++l) {
    const double scale = std::max(1.0, max_abs(fd[l]));
    EXPECT_LT(max_abs_diff(g.layers[l], fd[l]) / scale, 1e-6) << "layer " << l;
  }
}

TEST(Gradient, LossAndGradientAgreeWithSeparateCalls) {
  const NetConfig cfg{2, 10, 4, 2};
  const Params p = random_params(cfg, 9);
  const data::Dataset ds = random_dataset(6, 4, 2, 9);
  const data::Shard shard(ds, iota_indices(6), 0);
  const LossAndGrad lg = loss_and_gradient(p, shard);
  EXPECT_EQ(lg.loss, loss(p, shard));
  const ParamGrad g = gradient(p, shard);
  for (std::size_t l = 0; l < 2; ++l) EXPECT_EQ(lg.grad.layers[l], g.layers[l]);
}

TEST(StochasticGradient, FullBatchEqualsGradient) {
  const NetConfig cfg{2, 10, 4, 2};
  const Params p = random_params(cfg, 10);
  const data::Dataset ds = random_dataset(6, 4, 2, 10);
  const data::Shard shard(ds, iota_indices(6), 0);
  const auto all = iota_indices(6);
  const ParamGrad sg = stochastic_gradient(p, shard, all);
  const ParamGrad g = gradient(p, shard);
  for (std::size_t l = 0; l < 2; ++l) EXPECT_LT(max_abs_diff(sg.layers[l], g.layers[l]), 1e-15);
}

TEST(StochasticGradient, SingletonsAverageToTheFullGradient) {
  const NetConfig cfg{2, 10, 4, 2};
  const Params p = random_params(cfg, 11);
  const data::Dataset ds = random_dataset(5, 4, 2, 11);
  const data::Shard shard(ds, iota_indices(5), 0);
  std::vector<Matrix> acc;
  for (const Matrix& w : p.W) acc.emplace_back(w.rows(), w.cols());
  for (std::size_t j = 0; j < 5; ++j) {
    const std::size_t one[] = {j};
    const ParamGrad sg = stochastic_gradient(p, shard, one);
    for (std::size_t l = 0; l < 2; ++l) acc[l].add_scaled(sg.layers[l], 0.2);
  }
  const ParamGrad g = gradient(p, shard);
  for (std::size_t l = 0; l < 2; ++l) EXPECT_LT(max_abs_diff(acc[l], g.layers[l]), 1e-12);
}

TEST(StochasticGradient, MonteCarloMeanIsUnbiased) {
  const NetConfig cfg{2, 8, 4, 1};
  const Params p = random_params(cfg, 12);
  const data::Dataset ds = random_dataset(8, 4, 1, 12);
  const data::Shard shard(ds, iota_indices(8), 0);
  RngStream rng(12, streams::kProbe);
  const int draws = 20000;
  std::vector<Matrix> acc;
  for (const Matrix& w : p.W) acc.emplace_back(w.rows(), w.cols());
  for (int k = 0; k < draws; ++k) {
    const auto batch = sample_batch(8, 2, rng);
    const ParamGrad sg = stochastic_gradient(p, shard, batch);
    for (std::size_t l = 0; l < 2; ++l) acc[l].add_scaled(sg.layers[l], 1.0 / draws);
  }
  const ParamGrad g = gradient(p, shard);
  for (std::size_t l = 0; l < 2; ++l) {
    const double scale = std::max(max_abs(g.layers[l]), 1e-3);
    EXPECT_LT(max_abs_diff(acc[l], g.layers[l]) / scale, 0.05) << "layer " << l;
  }
}

TEST(StochasticGradient, RejectsBadBatches) {
  const Params p = random_params({1, 4, 2, 1}, 13);
  const data::Dataset ds = dataset_from({{1, 0}, {0, 1}}, {{0}, {1}});
  const data::Shard shard(ds, {0, 1}, 0);
  EXPECT_THROW(stochastic_gradient(p, shard, std::vector<std::size_t>{}), ArgumentError);
  EXPECT_THROW(stochastic_gradient(p, shard, std::vector<std::size_t>{2}), ArgumentError);
}

TEST(SampleBatch, DistinctInRangeAndDeterministic) {
  RngStream a(3, 9), b(3, 9);
  const auto x = sample_batch(10, 4, a);
  const auto y = sample_batch(10, 4, b);
  EXPECT_EQ(x, y);
  std::set<std::size_t> uniq(x.begin(), x.end());
  EXPECT_EQ(uniq.size(), 4u);
  for (std::size_t i : x) EXPECT_LT(i, 10u);
}

TEST(Params, OutputLayerNeverChanges) {
  const NetConfig cfg{2, 8, 4, 2};
  Params p = random_params(cfg, 14);
  const Matrix v_before = *p.V;
  const data::Dataset ds = random_dataset(4, 4, 2, 14);
  const data::Shard shard(ds, iota_indices(4), 0);
  for (int s = 0; s < 5; ++s) apply_step(p, gradient(p, shard), 0.1);
  EXPECT_EQ(*p.V, v_before);
  const Params copy = p;
  EXPECT_EQ(copy.V.get(), p.V.get());
}

TEST(Params, InitVarianceMatchesWidth) {
  const NetConfig cfg{1, 10000, 10, 1};
  const Params p = random_params(cfg, 15);
  const Matrix& w = p.W[0];
  double total = 0.0;
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double s = 0.0;
    for (double v : w.row(r)) s += v * v;
    total += s;
  }
  const double mean_row_sq = total / static_cast<double>(w.rows());
  const double expected = 2.0 * 10.0 / 10000.0;
  EXPECT_NEAR(mean_row_sq / expected, 1.0, 0.1);
  EXPECT_EQ(p.V->rows(), 1u);
  EXPECT_EQ(p.V->cols(), 10000u);
}

TEST(Params, ShapesAndCount) {
  const NetConfig cfg{3, 7, 4, 2};
  const Params p = random_params(cfg, 16);
  ASSERT_EQ(p.num_layers(), 3u);
  EXPECT_EQ(p.W[0].rows(), 7u);
  EXPECT_EQ(p.W[0].cols(), 4u);
  EXPECT_EQ(p.W[1].cols(), 7u);
  EXPECT_EQ(cfg.num_trainable(), 7u * 4u + 2u * 49u);
  EXPECT_THROW((NetConfig{0, 7, 4, 2}.validate()), ArgumentError);
}

TEST(TupleArithmetic, NormsAndInner) {
  const std::vector<Matrix> a{Matrix{{1, 2}}, Matrix{{3}}};
  const std::vector<Matrix> b{Matrix{{0, 1}}, Matrix{{-1}}};
  EXPECT_EQ(frobenius_norm_sq(std::span<const Matrix>(a)), 14.0);
  EXPECT_EQ(inner(a, b), -1.0);
  const auto diff = difference(a, b);
  EXPECT_EQ(diff[0], (Matrix{{1, 1}}));
  EXPECT_EQ(diff[1], (Matrix{{4}}));
  const std::vector<Matrix> wrong{Matrix{{1, 2, 3}}, Matrix{{3}}};
  EXPECT_THROW(difference(a, wrong), ShapeError);
}
