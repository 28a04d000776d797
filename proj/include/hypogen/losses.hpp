#pragma once

// Training objectives. Objectives named *_objective are log-likelihoods to be
// maximized; the trainer minimizes their negation. The repetition term
// log(1 - p) is a reward added to the maximized objective.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>
#include <span>
#include <vector>

#include "hypogen/autodiff.hpp"
#include "hypogen/qa_model.hpp"
#include "hypogen/toylm.hpp"

namespace hypogen {

inline constexpr double kProbFloor = 1e-9;

namespace detail {
inline void check_gold(int gold, std::size_t n) {
  if (gold < 0 || static_cast<std::size_t>(gold) >= n)
    throw ContractError("gold index " + std::to_string(gold) + " outside " + std::to_string(n) +
                        " candidates");
}
}  // namespace detail

/// log p(a*) from an answer distribution [1×n].
template <typename T>
Var<T> qa_objective(Graph<T>& g, const Var<T>& distribution, int gold) {
  detail::check_gold(gold, distribution->size());
  return g.log(g.clamp(g.pick(distribution, static_cast<std::size_t>(gold)), T(kProbFloor), T(1)));
}

/// log p(a*) where p = softmax(scores), computed fused.
template <typename T>
Var<T> qa_objective_from_scores(Graph<T>& g, const Var<T>& scores, int gold) {
  detail::check_gold(gold, scores->size());
  return g.pick(g.log_softmax(scores, -1), static_cast<std::size_t>(gold));
}

/// log p_sim(a*) + log p_lm(a*).
template <typename T>
Var<T> joint_objective(Graph<T>& g, const Var<T>& p_sim, const Var<T>& p_lm, int gold) {
  if (p_sim->size() != p_lm->size())
    throw DimensionError("joint_objective: distributions over different candidate counts");
  return g.add(qa_objective(g, p_sim, gold), qa_objective(g, p_lm, gold));
}

/// KL(p_gen || p_nl) for one decoding step. The reference is a plain value
/// array (frozen); its probabilities are floored at 1e-9.
template <typename T>
Var<T> kld_step(Graph<T>& g, const Var<T>& gen_logprobs, std::span<const T> ref_probs) {
  if (ref_probs.size() != gen_logprobs->size())
    throw DimensionError("kld_step: reference over " + std::to_string(ref_probs.size()) +
                         " tokens, generator over " + std::to_string(gen_logprobs->size()));
  std::vector<T> neg_log_ref(ref_probs.size());
  for (std::size_t i = 0; i < ref_probs.size(); ++i)
    neg_log_ref[i] = -std::log(std::max(ref_probs[i], T(kProbFloor)));
  Var<T> log_ratio = g.add_const(gen_logprobs, neg_log_ref);
  return g.sum(g.mul(g.exp(gen_logprobs), log_ratio));
}

/// Σ over distinct tokens already in the prefix of log(1 - p(w)), with p
/// clamped to at most 1 - 1e-9. Zero for an empty prefix.
template <typename T>
Var<T> repetition_penalty(Graph<T>& g, const Var<T>& step_logprobs, std::span<const int> prefix) {
  const std::set<int> seen(prefix.begin(), prefix.end());
  if (seen.empty()) return g.zeros({});
  std::vector<Var<T>> terms;
  for (int w : seen) {
    Var<T> p = g.clamp(g.exp(g.pick(step_logprobs, static_cast<std::size_t>(w))), T(0),
                       T(1.0 - kProbFloor));
    terms.push_back(g.log(g.add_scalar(g.scale(p, T(-1)), T(1))));
  }
  Var<T> total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = g.add(total, terms[i]);
  return total;
}

/// Teacher-forced Σ_i -log p_gen(target_i | [BOS; q; SEP; target_<i]).
template <typename T>
Var<T> supgen_loss(Graph<T>& g, const ToyLm<T>& generator, std::span<const int> question,
                   std::span<const int> target) {
  if (target.empty()) throw ContractError("supgen_loss needs a non-empty target");
  std::vector<int> input = generator_context(question);
  const std::size_t first = input.size() - 1;  // position that predicts target[0]
  input.insert(input.end(), target.begin(), target.end() - 1);
  if (input.size() > generator.config().max_len)
    throw LengthError("question plus target exceeds max_len " +
                      std::to_string(generator.config().max_len));
  auto out = lm_forward(g, generator, std::span<const int>(input), Logits::All);
  Var<T> logp = g.log_softmax(g.slice_rows(out.logits, first, target.size()), 1);
  const std::size_t V = generator.config().vocab_size;
  std::vector<T> onehot(target.size() * V, T(0));
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] < 0 || static_cast<std::size_t>(target[i]) >= V)
      throw IndexError("target id " + std::to_string(target[i]) + " outside vocabulary");
    onehot[i * V + static_cast<std::size_t>(target[i])] = T(1);
  }
  return g.scale(g.sum(g.mul(logp, g.constant({target.size(), V}, std::move(onehot)))), T(-1));
}

/// Per-component values of one example's loss. `total` is the node that is
/// minimized: -qa_sim - qa_lm + λ_kld·kld - λ_rep·repetition.
template <typename T>
struct LossBreakdown {
  double qa_sim = 0.0;
  double qa_lm = 0.0;
  double kld = 0.0;
  double repetition = 0.0;  // Σ log(1 - p), a reward (≤ 0)
  double lambda_kld = 0.0;
  double lambda_rep = 0.0;
  Var<T> total;
};

template <typename T>
LossBreakdown<T> combine_losses(Graph<T>& g, const Var<T>& qa_sim, const Var<T>& qa_lm,
                                const Var<T>& kld, const Var<T>& repetition, double lambda_kld,
                                double lambda_rep) {
  LossBreakdown<T> b;
  b.lambda_kld = lambda_kld;
  b.lambda_rep = lambda_rep;
  Var<T> total;
  auto accumulate = [&](const Var<T>& term, T weight, double& slot) {
    if (!term) return;
    slot = static_cast<double>(term->item());
    Var<T> t = weight == T(1) ? term : g.scale(term, weight);
    total = total ? g.add(total, t) : t;
  };
  accumulate(qa_sim, T(-1), b.qa_sim);
  accumulate(qa_lm, T(-1), b.qa_lm);
  if (lambda_kld != 0.0) accumulate(kld, static_cast<T>(lambda_kld), b.kld);
  else if (kld) b.kld = static_cast<double>(kld->item());
  if (lambda_rep != 0.0) accumulate(repetition, static_cast<T>(-lambda_rep), b.repetition);
  else if (repetition) b.repetition = static_cast<double>(repetition->item());
  b.total = total ? total : g.zeros({});
  return b;
}

}  // namespace hypogen
