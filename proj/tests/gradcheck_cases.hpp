#pragma once

// Gradient-check cases shared by the unit tests and the acceptance run.

#include <functional>
#include <random>
#include <vector>

#include "hypogen/autodiff.hpp"

namespace gradcases {

using namespace hypogen;
using G = Graph<double>;
using V = Var<double>;

constexpr double kTol = 1e-4;
// Deep chains carry O(h^2) truncation terms above kTol at h = 1e-3; the
// double-precision oracle has headroom for a smaller step.
constexpr double kCompositeStep = 1e-5;

inline V random_param(Shape shape, std::uint64_t seed, double lo = -2.0, double hi = 2.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return make_param<double>(std::move(shape), std::move(v));
}

// Σ y ⊙ R with a fixed random R, so no output element's gradient is trivially
// symmetric (e.g. Σ softmax = 1).
inline V project(G& g, const V& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> r(y->size());
  for (auto& x : r) x = u(rng);
  return g.sum(g.mul(y, g.constant(y->shape, std::move(r))));
}

struct OpCase {
  const char* name;
  std::vector<V> inputs;
  std::function<V(G&)> build;
};

inline std::vector<OpCase> op_cases() {
  std::vector<OpCase> c;
  auto a = random_param({3, 4}, 1), b = random_param({4, 5}, 2), bt = random_param({5, 4}, 3);
  c.push_back({"matmul", {a, b}, [=](G& g) { return project(g, g.matmul(a, b)); }});
  c.push_back({"matmul_bt", {a, bt}, [=](G& g) { return project(g, g.matmul_bt(a, bt)); }});
  c.push_back({"transpose", {a}, [=](G& g) { return project(g, g.transpose(a)); }});
  auto a2 = random_param({3, 4}, 4);
  c.push_back({"add", {a, a2}, [=](G& g) { return project(g, g.add(a, a2)); }});
  c.push_back({"sub", {a, a2}, [=](G& g) { return project(g, g.sub(a, a2)); }});
  c.push_back({"mul", {a, a2}, [=](G& g) { return project(g, g.mul(a, a2)); }});
  auto row = random_param({1, 4}, 5);
  c.push_back({"add_row", {a, row}, [=](G& g) { return project(g, g.add_row(a, row)); }});
  c.push_back({"scale", {a}, [=](G& g) { return project(g, g.scale(a, -1.7)); }});
  c.push_back({"add_scalar", {a}, [=](G& g) { return project(g, g.add_scalar(a, 0.3)); }});
  c.push_back({"add_const", {a}, [=](G& g) {
                 std::vector<double> k(12, 0.25);
                 return project(g, g.add_const(a, std::span<const double>(k)));
               }});
  c.push_back({"exp", {a}, [=](G& g) { return project(g, g.exp(a)); }});
  auto pos = random_param({3, 4}, 6, 0.2, 2.0);
  c.push_back({"log", {pos}, [=](G& g) { return project(g, g.log(pos)); }});
  // Inputs stay at least 0.1 away from the clamp bounds and the relu kink.
  auto away = make_param<double>({2, 3}, std::vector<double>{-0.9, -0.4, 0.2, 0.5, 0.7, 1.6});
  c.push_back({"clamp", {away}, [=](G& g) { return project(g, g.clamp(away, -0.5, 0.6)); }});
  c.push_back({"relu", {away}, [=](G& g) { return project(g, g.relu(away)); }});
  c.push_back({"gelu", {a}, [=](G& g) { return project(g, g.gelu(a)); }});
  c.push_back({"sum", {a}, [=](G& g) { return g.scale(g.sum(g.mul(a, a)), 0.5); }});
  c.push_back({"mean", {a}, [=](G& g) { return g.mean(g.mul(a, a2)); }});
  c.push_back({"mean_rows", {a}, [=](G& g) { return project(g, g.mean_rows(a)); }});
  c.push_back({"dot", {a, a2}, [=](G& g) { return g.dot(a, a2); }});
  c.push_back({"pick", {a}, [=](G& g) { return g.mul(g.pick(a, 7), g.pick(a, 2)); }});
  c.push_back({"reshape", {a}, [=](G& g) { return project(g, g.reshape(a, {2, 6})); }});
  auto r1 = random_param({2, 4}, 7);
  c.push_back({"concat_rows", {a, r1}, [=](G& g) { return project(g, g.concat_rows({a, r1})); }});
  auto c1 = random_param({3, 2}, 8);
  c.push_back({"concat_cols", {a, c1}, [=](G& g) { return project(g, g.concat_cols({a, c1})); }});
  c.push_back({"slice_rows", {a}, [=](G& g) { return project(g, g.slice_rows(a, 1, 2)); }});
  c.push_back({"slice_cols", {a}, [=](G& g) { return project(g, g.slice_cols(a, 1, 2)); }});
  c.push_back({"mask_fill", {a}, [=](G& g) {
                 std::vector<std::uint8_t> m{1, 0, 0, 1, 0, 1, 0, 0, 1, 0, 0, 0};
                 return project(g, g.mask_fill(a, m, -3.0));
               }});
  c.push_back({"softmax_rows", {a}, [=](G& g) { return project(g, g.softmax(a, 1)); }});
  c.push_back({"softmax_cols", {a}, [=](G& g) { return project(g, g.softmax(a, 0)); }});
  c.push_back({"log_softmax_rows", {a}, [=](G& g) { return project(g, g.log_softmax(a, -1)); }});
  c.push_back({"log_softmax_cols", {a}, [=](G& g) { return project(g, g.log_softmax(a, 0)); }});
  auto gain = random_param({1, 4}, 9, 0.5, 1.5), bias = random_param({1, 4}, 10);
  c.push_back({"layer_norm", {a, gain, bias},
               [=](G& g) { return project(g, g.layer_norm(a, gain, bias)); }});
  auto table = random_param({6, 3}, 11);
  c.push_back({"embedding_lookup", {table}, [=](G& g) {
                 const std::vector<int> ids{4, 0, 4, 2};
                 return project(g, g.embedding_lookup(table, ids));
               }});
  auto weights = random_param({2, 6}, 12, 0.0, 1.0);
  c.push_back({"embedding_rows", {table, weights},
               [=](G& g) { return project(g, g.embedding_rows(table, weights)); }});
  return c;
}


/// Randomized chain: logits -> softmax -> soft embedding -> linear ->
/// layer_norm -> gelu -> mean -> similarity scores -> log-likelihood.
inline OpCase composite_case(std::uint64_t trial) {
  const std::uint64_t s = 100 + 10 * trial;
  auto logits = random_param({2, 7}, s, -2.0, 2.0);
  auto table = random_param({7, 4}, s + 1);
  auto cand = random_param({3, 4}, s + 2);
  auto w = random_param({4, 4}, s + 3);
  auto gain = random_param({1, 4}, s + 4, 0.5, 1.5);
  auto bias = random_param({1, 4}, s + 5);
  return {"composite", {logits, table, cand, w, gain, bias}, [=](G& g) {
            V soft = g.softmax(logits, -1);
            V emb = g.embedding_rows(table, soft);
            V h = g.gelu(g.layer_norm(g.matmul(emb, w), gain, bias));
            V hyp = g.mean_rows(h);
            V scores = g.matmul_bt(hyp, cand);
            return g.pick(g.log_softmax(scores, -1), trial % 3);
          }};
}

}  // namespace gradcases
