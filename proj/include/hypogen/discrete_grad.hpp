#pragma once

// Gradient estimators for sampling discrete tokens: Gumbel noise, the
// Gumbel-softmax relaxation, the straight-through estimator and its
// single-step top-K variant.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "hypogen/autodiff.hpp"

namespace hypogen {

template <typename T>
struct StSample {
  Var<T> hard;  // [1×V] or [K×V] one-hots; the forward value
  Var<T> soft;  // [1×V] distribution that receives the backward pass
  std::vector<int> chosen_ids;
};

inline double gumbel_from_uniform(double u) {
  u = std::clamp(u, 1e-9, 1.0 - 1e-9);
  return -std::log(-std::log(u));
}

template <typename T>
std::vector<T> sample_gumbel(std::size_t count, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<T> out(count);
  for (auto& g : out) g = static_cast<T>(gumbel_from_uniform(uniform(rng)));
  return out;
}

/// softmax((logits + noise) / tau). An empty noise vector means no noise.
template <typename T>
Var<T> gumbel_softmax(Graph<T>& g, const Var<T>& logits, double tau, const std::vector<T>& noise) {
  if (!(tau > 0.0)) throw ContractError("Gumbel temperature must be positive");
  Var<T> x = noise.empty() ? logits : g.add_const(logits, noise);
  if (tau != 1.0) x = g.scale(x, static_cast<T>(1.0 / tau));
  return g.softmax(x, -1);
}

template <typename T>
StSample<T> straight_through(Graph<T>& g, const Var<T>& soft) {
  StSample<T> s;
  s.soft = soft;
  s.hard = g.straight_through(soft);
  const std::size_t V = soft->cols();
  for (std::size_t i = 0; i < s.hard->size(); ++i)
    if (s.hard->value[i] == T(1)) s.chosen_ids.push_back(static_cast<int>(i % V));
  return s;
}

template <typename T>
StSample<T> top_k_st(Graph<T>& g, const Var<T>& logits, std::size_t k, double tau,
                     const std::vector<T>& noise) {
  if (k == 0) throw ContractError("top-K needs K >= 1");
  if (k > logits->size())
    throw ContractError("top-K with K=" + std::to_string(k) + " exceeds vocabulary " +
                        std::to_string(logits->size()));
  StSample<T> s;
  s.soft = gumbel_softmax(g, logits, tau, noise);
  s.hard = g.top_k_straight_through(s.soft, k);
  const std::size_t V = s.soft->size();
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t v = 0; v < V; ++v)
      if (s.hard->value[r * V + v] == T(1)) s.chosen_ids.push_back(static_cast<int>(v));
  return s;
}

}  // namespace hypogen
