#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "hypogen/discrete_grad.hpp"

using namespace hypogen;
using G = Graph<double>;
using V = Var<double>;

namespace {

std::vector<double> softmax_of(const std::vector<double>& x) {
  const double mx = *std::max_element(x.begin(), x.end());
  std::vector<double> p(x.size());
  double z = 0;
  for (std::size_t i = 0; i < x.size(); ++i) z += p[i] = std::exp(x[i] - mx);
  for (auto& v : p) v /= z;
  return p;
}

}  // namespace

TEST(Gumbel, AnalyticPoint) {
  EXPECT_NEAR(gumbel_from_uniform(std::exp(-1.0)), 0.0, 1e-15);
}

TEST(Gumbel, ClampsTheUniformDraw) {
  EXPECT_TRUE(std::isfinite(gumbel_from_uniform(0.0)));
  EXPECT_TRUE(std::isfinite(gumbel_from_uniform(1.0)));
  EXPECT_DOUBLE_EQ(gumbel_from_uniform(0.0), gumbel_from_uniform(1e-9));
}

TEST(Gumbel, SampleMeanIsEulerMascheroni) {
  std::mt19937_64 rng(42);
  const auto noise = sample_gumbel<double>(100000, rng);
  const double mean = std::accumulate(noise.begin(), noise.end(), 0.0) / noise.size();
  EXPECT_NEAR(mean, 0.5772156649, 0.01);
}

TEST(Gumbel, FixedSeedIsDeterministic) {
  std::mt19937_64 a(7), b(7);
  EXPECT_EQ(sample_gumbel<float>(64, a), sample_gumbel<float>(64, b));
}

TEST(GumbelSoftmax, NoNoiseUnitTemperatureIsSoftmax) {
  G g;
  const std::vector<double> logits{0.5, -1.0, 2.0, 0.0};
  auto s = gumbel_softmax(g, g.constant({1, 4}, logits), 1.0, {});
  auto zeros = gumbel_softmax(g, g.constant({1, 4}, logits), 1.0, std::vector<double>(4, 0.0));
  const auto expect = softmax_of(logits);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(s->value[i], expect[i], 1e-15);
    EXPECT_NEAR(zeros->value[i], expect[i], 1e-15);
  }
}

TEST(GumbelSoftmax, LowTemperatureApproachesOneHot) {
  G g;
  auto s = gumbel_softmax(g, g.constant({1, 4}, {0.5, -1.0, 2.0, 0.0}), 0.01, {});
  EXPECT_NEAR(s->value[2], 1.0, 1e-12);
}

TEST(GumbelSoftmax, RejectsNonPositiveTemperature) {
  G g;
  auto x = g.constant({1, 2}, {0.0, 1.0});
  EXPECT_THROW(gumbel_softmax(g, x, 0.0, {}), ContractError);
  EXPECT_THROW(gumbel_softmax(g, x, -1.0, {}), ContractError);
}

TEST(GumbelSoftmax, IsDifferentiable) {
  auto logits = make_param<double>({1, 5}, std::vector<double>{0.3, -0.2, 1.1, 0.0, -1.5});
  const std::vector<double> noise{0.1, -0.4, 0.7, 0.2, 0.0};
  auto build = [&](G& g) { return g.pick(gumbel_softmax(g, logits, 0.7, noise), 2); };
  EXPECT_LT(grad_check<double>(build, {logits}), 1e-4);
}

TEST(GumbelMax, ArgmaxFrequenciesMatchSoftmax) {
  const std::vector<double> logits{1.0, 0.2, -0.5, 2.0, 0.0};
  const auto p = softmax_of(logits);
  std::mt19937_64 rng(2024);
  std::vector<double> counts(logits.size(), 0.0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    G g(0, false);
    auto soft = gumbel_softmax(g, g.constant({1, 5}, logits), 1.0, sample_gumbel<double>(5, rng));
    counts[static_cast<std::size_t>(straight_through(g, soft).chosen_ids.front())] += 1.0;
  }
  for (std::size_t k = 0; k < logits.size(); ++k) EXPECT_NEAR(counts[k] / draws, p[k], 0.01) << k;
}

TEST(StraightThrough, ForwardIsExactOneHotArgmax) {
  G g;
  auto st = straight_through(g, g.constant({1, 3}, {0.2, 0.7, 0.1}));
  EXPECT_EQ(st.hard->value, (std::vector<double>{0, 1, 0}));
  EXPECT_EQ(st.chosen_ids, (std::vector<int>{1}));
}

TEST(StraightThrough, TiesGoToLowestIndex) {
  G g;
  auto st = straight_through(g, g.constant({1, 4}, {0.1, 0.4, 0.4, 0.1}));
  EXPECT_EQ(st.chosen_ids, (std::vector<int>{1}));
}

TEST(StraightThrough, RowsAreIndependent) {
  G g;
  auto st = straight_through(g, g.constant({2, 3}, {0.5, 0.3, 0.2, 0.1, 0.1, 0.8}));
  EXPECT_EQ(st.hard->value, (std::vector<double>{1, 0, 0, 0, 0, 1}));
  EXPECT_EQ(st.chosen_ids, (std::vector<int>{0, 2}));
}

TEST(StraightThrough, BackwardPassesGradientUnchanged) {
  auto soft = make_param<double>({1, 3}, std::vector<double>{0.2, 0.7, 0.1});
  G g;
  auto st = straight_through(g, soft);
  g.backward(g.sum(g.mul(st.hard, g.constant({1, 3}, {3.0, -1.0, 0.5}))));
  EXPECT_EQ(soft->grad, (std::vector<double>{3.0, -1.0, 0.5}));
}

// Generator logits -> Gumbel-softmax -> ST -> soft embedding -> similarity
// scores -> log-likelihood. The oracle is the surrogate graph
// ⟨stop_grad(∂L/∂hard), soft⟩, whose gradient is what ST prescribes.
TEST(StraightThrough, MatchesSoftSubstitutionOracle) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  auto random = [&](Shape s) {
    std::vector<double> v(numel(s));
    for (auto& x : v) x = n(rng);
    return make_param<double>(s, v);
  };
  for (int trial = 0; trial < 3; ++trial) {
    auto logits = random({1, 8});
    auto table = random({8, 4});
    auto cands = random({3, 4});
    const auto noise = sample_gumbel<double>(8, rng);
    auto downstream = [&](G& g, const V& row) {
      V scores = g.matmul_bt(g.embedding_rows(table, row), cands);
      return g.pick(g.log_softmax(scores, -1), static_cast<std::size_t>(trial));
    };

    logits->grad.clear();
    G g1;
    auto st = straight_through(g1, gumbel_softmax(g1, logits, 0.8, noise));
    g1.backward(downstream(g1, st.hard));
    const auto st_grad = logits->grad;

    // dL/dhard at the hard point.
    auto hard_leaf = make_param<double>({1, 8}, st.hard->value);
    {
      G g;
      g.backward(downstream(g, hard_leaf));
    }
    logits->grad.clear();
    G g2;
    V soft = gumbel_softmax(g2, logits, 0.8, noise);
    g2.backward(g2.sum(g2.mul(g2.constant({1, 8}, hard_leaf->grad), soft)));
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(st_grad[i], logits->grad[i], 1e-14);
  }
}

// For a downstream map that is linear in the token row, the ST gradient is
// literally the gradient of the graph with hard replaced by soft.
TEST(StraightThrough, EqualsSoftForwardGradientForLinearDownstream) {
  auto logits = make_param<double>({1, 5}, std::vector<double>{0.4, -0.3, 1.2, 0.1, -0.8});
  const std::vector<double> v{1.0, -2.0, 0.5, 3.0, 0.0};
  logits->grad.clear();
  G g1;
  auto st = straight_through(g1, gumbel_softmax(g1, logits, 1.0, {}));
  g1.backward(g1.sum(g1.mul(st.hard, g1.constant({1, 5}, v))));
  const auto st_grad = logits->grad;
  logits->grad.clear();
  G g2;
  g2.backward(g2.sum(g2.mul(gumbel_softmax(g2, logits, 1.0, {}), g2.constant({1, 5}, v))));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(st_grad[i], logits->grad[i]);
}

TEST(TopK, SortsByProbability) {
  G g;
  auto s = top_k_st(g, g.constant({1, 3}, {3.0, 1.0, 2.0}), 2, 1.0, {});
  EXPECT_EQ(s.chosen_ids, (std::vector<int>{0, 2}));
  EXPECT_EQ(s.hard->shape, (Shape{2, 3}));
  EXPECT_EQ(s.hard->value, (std::vector<double>{1, 0, 0, 0, 0, 1}));
}

TEST(TopK, FullVocabularyIsAPermutation) {
  G g;
  auto s = top_k_st(g, g.constant({1, 6}, {0.1, 2.0, -1.0, 0.5, 0.5, 3.0}), 6, 1.0, {});
  std::vector<int> ids = s.chosen_ids;
  std::sort(ids.begin(), ids.end());
  EXPECT_EQ(ids, (std::vector<int>{0, 1, 2, 3, 4, 5}));
  // Equal probabilities keep index order.
  EXPECT_EQ(s.chosen_ids, (std::vector<int>{5, 1, 3, 4, 0, 2}));
}

TEST(TopK, RowsAreDistinctOneHotsWithDecreasingProbability) {
  std::mt19937_64 rng(9);
  G g;
  const std::vector<double> logits{0.3, 1.7, -0.2, 0.9, 2.2, -1.0, 0.0};
  auto s = top_k_st(g, g.constant({1, 7}, logits), 4, 1.0, sample_gumbel<double>(7, rng));
  EXPECT_EQ(std::set<int>(s.chosen_ids.begin(), s.chosen_ids.end()).size(), 4u);
  for (std::size_t r = 0; r < 4; ++r) {
    double sum = 0;
    for (std::size_t v = 0; v < 7; ++v) sum += s.hard->value[r * 7 + v];
    EXPECT_EQ(sum, 1.0);
    EXPECT_EQ(s.hard->value[r * 7 + static_cast<std::size_t>(s.chosen_ids[r])], 1.0);
    if (r > 0) {
      EXPECT_GT(s.soft->value[static_cast<std::size_t>(s.chosen_ids[r - 1])],
                s.soft->value[static_cast<std::size_t>(s.chosen_ids[r])]);
    }
  }
}

TEST(TopK, SingleRowEqualsStraightThrough) {
  std::mt19937_64 rng(10);
  const auto noise = sample_gumbel<double>(5, rng);
  G g;
  auto logits = g.constant({1, 5}, {0.3, 1.7, -0.2, 0.9, 2.2});
  auto a = top_k_st(g, logits, 1, 0.5, noise);
  auto b = straight_through(g, gumbel_softmax(g, logits, 0.5, noise));
  EXPECT_EQ(a.hard->value, b.hard->value);
  EXPECT_EQ(a.chosen_ids, b.chosen_ids);
}

TEST(TopK, BackwardSumsRowGradientsIntoTheSharedSoftmax) {
  auto soft = make_param<double>({1, 4}, std::vector<double>{0.1, 0.4, 0.2, 0.3});
  G g;
  auto hard = g.top_k_straight_through(soft, 2);  // rows: token 1, token 3
  g.backward(g.sum(g.mul(hard, g.constant({2, 4}, {1, 2, 3, 4, 10, 20, 30, 40}))));
  EXPECT_EQ(soft->grad, (std::vector<double>{11, 22, 33, 44}));
}

TEST(TopK, RejectsInvalidK) {
  G g;
  auto x = g.constant({1, 3}, {0.0, 1.0, 2.0});
  EXPECT_THROW(top_k_st(g, x, 4, 1.0, {}), ContractError);
  EXPECT_THROW(top_k_st(g, x, 0, 1.0, {}), ContractError);
}
