#include <algorithm>
#include <numeric>

#include "test_util.hpp"

using kf::Tensor;

namespace {

struct Problem {
  Tensor x;
  std::vector<int> y;
};

Problem problem(std::size_t n, std::uint64_t seed) {
  Problem p{testutil::random_matrix(n, 4, seed), std::vector<int>(n)};
  kf::SeededRng rng(seed + 1);
  for (auto& v : p.y) v = static_cast<int>(rng.below(3));
  return p;
}

nn::Network mlp() {
  return testutil::build_net({nn::DenseSpec{4, 6}, nn::ActivationSpec{nn::ActivationFn::Tanh},
                              nn::DenseSpec{6, 3}}, 7);
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

TEST(AggregateKfs, IdenticalLocalsGiveTheSameFactor) {
  const kf::KFactorDiag a{{0.1, 2.5, 3.0}, {7.0}};
  const std::vector<kf::KFactorDiag> locals{a, a};
  const auto out = kf::aggregate_kfs(locals);
  EXPECT_EQ(out.H, a.H);
  EXPECT_EQ(out.S, a.S);
}

TEST(AggregateKfs, MeanOfTwo) {
  const std::vector<kf::KFactorDiag> locals{{{1.0}, {0.0}}, {{3.0}, {1.0}}};
  const auto out = kf::aggregate_kfs(locals);
  EXPECT_EQ(out.H[0], 2.0);
  EXPECT_EQ(out.S[0], 0.5);
}

TEST(AggregateKfs, MatchesWorkerOrderedSumBitwise) {
  kf::SeededRng rng(3);
  std::vector<std::pair<std::size_t, kf::KFactorDiag>> tagged;
  for (std::size_t k = 0; k < 4; ++k) {
    kf::KFactorDiag f;
    for (int i = 0; i < 16; ++i) f.H.push_back(std::exp(rng.uniform(-20.0, 20.0)));
    for (int i = 0; i < 5; ++i) f.S.push_back(std::exp(rng.uniform(-20.0, 20.0)));
    tagged.emplace_back(k, f);
  }
  std::vector<kf::KFactorDiag> ordered;
  for (const auto& [k, f] : tagged) ordered.push_back(f);
  const auto got = kf::aggregate_kfs(ordered);

  // Independent oracle: shuffle, sort back by worker id, sum left to right.
  std::reverse(tagged.begin(), tagged.end());
  std::swap(tagged[0], tagged[2]);
  std::sort(tagged.begin(), tagged.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 0; i < got.H.size(); ++i) {
    double acc = tagged[0].second.H[i];
    for (std::size_t k = 1; k < 4; ++k) acc = acc + tagged[k].second.H[i];
    EXPECT_EQ(got.H[i], acc / 4.0);
  }
  for (std::size_t i = 0; i < got.S.size(); ++i) {
    double acc = tagged[0].second.S[i];
    for (std::size_t k = 1; k < 4; ++k) acc = acc + tagged[k].second.S[i];
    EXPECT_EQ(got.S[i], acc / 4.0);
  }
}

TEST(AggregateKfs, WeightedMean) {
  const std::vector<kf::KFactorDiag> locals{{{1.0}, {2.0}}, {{4.0}, {8.0}}};
  const std::vector<double> w{3.0, 1.0};
  const auto out = kf::aggregate_kfs(locals, w);
  EXPECT_DOUBLE_EQ(out.H[0], 1.75);
  EXPECT_DOUBLE_EQ(out.S[0], 3.5);
}

TEST(AggregateKfs, Errors) {
  EXPECT_THROW(kf::aggregate_kfs({}), kf::ValidationError);
  const std::vector<kf::KFactorDiag> ragged{{{1.0}, {1.0}}, {{1.0, 2.0}, {1.0}}};
  EXPECT_THROW(kf::aggregate_kfs(ragged), kf::DimensionError);
}

TEST(Distributed, SingleWorkerIsBitwiseTheSerialStep) {
  const auto p = problem(12, 1);
  auto serial = mlp(), master = mlp();
  kf::AdaFisher opt_serial, opt_dist;
  kf::DistributedTrainer trainer(master, {1});
  const auto idx = iota(12);
  for (int step = 0; step < 4; ++step) {
    serial.backward(nn::nll_softmax_loss(serial.forward(kf::gather_rows(p.x, idx), true), p.y).dlogits);
    opt_serial.step(serial, 0.01);
    trainer.step(opt_dist, p.x, p.y, idx, 0.01);
  }
  EXPECT_EQ(serial.flat_parameters(), master.flat_parameters());
}

TEST(Distributed, DuplicatedHalfBatchAggregatesToTheHalfBatchFactors) {
  const auto p = problem(6, 2);
  auto single = mlp(), master = mlp();
  const auto half = iota(6);
  single.backward(nn::nll_softmax_loss(single.forward(p.x, true), p.y).dlogits);
  const auto expected = kf::KroneckerCurvature::raw_factors(single);

  std::vector<std::size_t> doubled = half;
  doubled.insert(doubled.end(), half.begin(), half.end());
  kf::AdaFisher opt;
  kf::DistributedTrainer trainer(master, {2});
  const auto stats = trainer.step(opt, p.x, p.y, doubled, 0.01);
  for (std::size_t l : {0u, 2u}) {
    EXPECT_EQ(stats.aggregated[l]->H, expected[l]->H);
    EXPECT_EQ(stats.aggregated[l]->S, expected[l]->S);
  }
}

class EqualSplit : public ::testing::TestWithParam<std::size_t> {};

TEST_P(EqualSplit, AggregatesMatchFullBatchAndReplicasAgree) {
  const std::size_t K = GetParam();
  const auto p = problem(16, 3);
  auto master = mlp();
  kf::AdaFisher opt;
  kf::DistributedTrainer trainer(master, {K});
  const auto idx = iota(16);
  for (int step = 0; step < 3; ++step) {
    auto full = master;
    full.backward(nn::nll_softmax_loss(full.forward(p.x, true), p.y).dlogits);
    const auto g_full = full.flat_gradients();
    const auto kf_full = kf::KroneckerCurvature::raw_factors(full);

    const auto stats = trainer.step(opt, p.x, p.y, idx, 0.01);
    ASSERT_EQ(stats.gradient.size(), g_full.size());
    for (std::size_t i = 0; i < g_full.size(); ++i) EXPECT_NEAR(stats.gradient[i], g_full[i], 1e-12);
    for (std::size_t l : {0u, 2u}) {
      for (std::size_t i = 0; i < kf_full[l]->H.size(); ++i)
        EXPECT_NEAR(stats.aggregated[l]->H[i], kf_full[l]->H[i], 1e-12);
      for (std::size_t i = 0; i < kf_full[l]->S.size(); ++i)
        EXPECT_NEAR(stats.aggregated[l]->S[i], kf_full[l]->S[i], 1e-12);
    }
    const auto theta = master.flat_parameters();
    for (std::size_t k = 1; k < K; ++k) EXPECT_EQ(trainer.replica(k).flat_parameters(), theta);
  }
}

INSTANTIATE_TEST_SUITE_P(Workers, EqualSplit, ::testing::Values(2u, 4u));

TEST(Distributed, ThreadedAndSequentialRunsAreBitwiseEqual) {
  const auto p = problem(16, 4);
  auto a = mlp(), b = mlp();
  kf::AdaFisher oa, ob;
  kf::DistributedTrainer ta(a, {4, true}), tb(b, {4, false});
  const auto idx = iota(16);
  for (int step = 0; step < 3; ++step) {
    ta.step(oa, p.x, p.y, idx, 0.01);
    tb.step(ob, p.x, p.y, idx, 0.01);
  }
  EXPECT_EQ(a.flat_parameters(), b.flat_parameters());
}

TEST(Distributed, ShardingRules) {
  auto net = mlp();
  kf::DistributedTrainer strict(net, {4});
  const auto s = strict.shards(8);
  EXPECT_EQ(s.front(), (std::pair<std::size_t, std::size_t>{0, 2}));
  EXPECT_EQ(s.back(), (std::pair<std::size_t, std::size_t>{6, 8}));
  EXPECT_THROW(strict.shards(10), kf::ValidationError);
  EXPECT_THROW(strict.shards(3), kf::ValidationError);
  kf::DistributedTrainer weighted(net, {4, true, true});
  const auto w = weighted.shards(10);
  EXPECT_EQ(w[0].second - w[0].first, 3u);
  EXPECT_EQ(w[3].second - w[3].first, 2u);
  EXPECT_EQ(w[3].second, 10u);
  EXPECT_THROW(kf::DistributedTrainer(net, {0}), kf::ValidationError);
}

TEST(Distributed, WeightedModeMatchesFullBatchGradient) {
  const auto p = problem(10, 5);
  auto master = mlp();
  auto full = master;
  full.backward(nn::nll_softmax_loss(full.forward(p.x, true), p.y).dlogits);
  kf::AdaFisher opt;
  kf::DistributedTrainer trainer(master, {4, true, true});
  const auto stats = trainer.step(opt, p.x, p.y, iota(10), 0.01);
  const auto g = full.flat_gradients();
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(stats.gradient[i], g[i], 1e-12);
}
