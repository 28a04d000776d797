#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "hypogen/optim.hpp"

using namespace hypogen;

namespace {

NamedParams one_param(std::vector<float> values) {
  const std::size_t n = values.size();
  return {{"p", make_param<float>({1, n}, std::move(values))}};
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  auto params = one_param({0.5f, -1.25f, 3.0f});
  const auto before = params[0].second->value;
  AdamState state;
  for (int i = 0; i < 10; ++i) {
    params[0].second->grad.assign(3, 0.0f);
    adam_step(params, state, 1e-2);
  }
  EXPECT_EQ(params[0].second->value, before);
  params[0].second->grad.clear();  // no gradient recorded counts as zero
  adam_step(params, state, 1e-2);
  EXPECT_EQ(params[0].second->value, before);
  EXPECT_EQ(state["p"].step, 11u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto params = one_param({1.0f, 1.0f});
  params[0].second->grad = {0.3f, -7.0f};
  AdamState state;
  adam_step(params, state, 0.01);
  EXPECT_NEAR(params[0].second->value[0], 0.99f, 1e-6);
  EXPECT_NEAR(params[0].second->value[1], 1.01f, 1e-6);
}

TEST(Adam, ConstantGradientUpdateApproachesLearningRate) {
  const double lr = 1e-3;
  auto params = one_param({0.0f});
  AdamState state;
  double last_update = 0;
  for (int step = 0; step < 1000; ++step) {
    params[0].second->grad = {2.5f};
    const float before = params[0].second->value[0];
    adam_step(params, state, lr);
    last_update = before - params[0].second->value[0];
  }
  EXPECT_NEAR(last_update, lr, 0.05 * lr);
}

TEST(Adam, MatchesAnIndependentRecurrence) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  auto params = one_param({0.7f});
  AdamState state;
  double x = 0.7, m = 0, v = 0;
  for (int t = 1; t <= 50; ++t) {
    const float g = static_cast<float>(n(rng));
    params[0].second->grad = {g};
    adam_step(params, state, 0.05);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * double(g) * g;
    x -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  EXPECT_NEAR(params[0].second->value[0], x, 1e-5);
}

TEST(Adam, IdenticalRunsGiveIdenticalParameters) {
  auto run = [] {
    auto params = one_param({0.1f, 0.2f, 0.3f, 0.4f});
    AdamState state;
    std::mt19937_64 rng(9);
    std::normal_distribution<float> n(0.0f, 1.0f);
    for (int i = 0; i < 100; ++i) {
      params[0].second->grad = {n(rng), n(rng), n(rng), n(rng)};
      adam_step(params, state, 1e-2);
    }
    return std::make_pair(params[0].second->value, state);
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, ShapeMismatchIsAContractError) {
  auto params = one_param({1.0f, 2.0f});
  AdamState state;
  params[0].second->grad = {1.0f};
  EXPECT_THROW(adam_step(params, state, 1e-2), ContractError);
  params[0].second->grad = {1.0f, 1.0f};
  state["p"].m.assign(5, 0.0f);
  state["p"].v.assign(5, 0.0f);
  EXPECT_THROW(adam_step(params, state, 1e-2), ContractError);
}
