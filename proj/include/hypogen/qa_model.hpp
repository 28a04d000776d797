#pragma once

// The generator–classifier system: hypothesis generation, the similarity
// classifier, the LM-based classifier, and the end-to-end, NoInteraction and
// supervised-generator baselines.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "hypogen/autodiff.hpp"
#include "hypogen/data.hpp"
#include "hypogen/discrete_grad.hpp"
#include "hypogen/toylm.hpp"

namespace hypogen {

struct GenOptions {
  std::size_t hyp_len = 1;
  std::size_t top_k = 0;  // 0 selects step-wise decoding of hyp_len tokens
  double tau = 1.0;
  bool noise = true;             // Gumbel perturbation; off at evaluation
  bool straight_through = true;  // off: the relaxed distribution is passed forward

  std::size_t length() const { return top_k > 0 ? top_k : hyp_len; }
};

template <typename T>
struct Hypothesis {
  std::vector<int> ids;
  std::vector<Var<T>> rows;      // forward value per hypothesis token, [1×V]
  std::vector<Var<T>> soft;      // relaxed distribution per decoding step, [1×V]
  std::vector<Var<T>> logprobs;  // noise-free log p_gen per decoding step, [1×V]
  std::vector<std::vector<int>> contexts;  // generator input ids per decoding step

  std::size_t size() const { return ids.size(); }
};

/// [BOS; q; SEP]
inline std::vector<int> generator_context(std::span<const int> question) {
  std::vector<int> ctx;
  ctx.reserve(question.size() + 2);
  ctx.push_back(Vocab::kBos);
  ctx.insert(ctx.end(), question.begin(), question.end());
  ctx.push_back(Vocab::kSep);
  return ctx;
}

template <typename T>
Hypothesis<T> generate_hypothesis(Graph<T>& g, const ToyLm<T>& generator,
                                  std::span<const int> question, const GenOptions& opt,
                                  std::mt19937_64& rng) {
  const std::size_t V = generator.config().vocab_size;
  const std::vector<int> ctx = generator_context(question);
  const std::size_t steps = opt.top_k > 0 ? 1 : opt.hyp_len;
  if (opt.length() == 0) throw ContractError("hypothesis length must be at least 1");
  if (ctx.size() + steps - 1 > generator.config().max_len)
    throw LengthError("question plus hypothesis exceeds max_len " +
                      std::to_string(generator.config().max_len));

  Hypothesis<T> h;
  std::vector<TokenSlot<T>> slots = id_slots<T>(ctx);
  std::vector<int> context_ids = ctx;
  for (std::size_t step = 0; step < steps; ++step) {
    Var<T> logits = lm_forward(g, generator, std::span<const TokenSlot<T>>(slots), Logits::Last).logits;
    const std::vector<T> noise = opt.noise ? sample_gumbel<T>(V, rng) : std::vector<T>{};
    h.logprobs.push_back(g.log_softmax(logits, -1));
    h.contexts.push_back(context_ids);
    if (opt.top_k > 0) {
      StSample<T> s = top_k_st(g, logits, opt.top_k, opt.tau, noise);
      h.soft.push_back(s.soft);
      h.ids = s.chosen_ids;
      for (std::size_t r = 0; r < opt.top_k; ++r)
        h.rows.push_back(opt.straight_through ? g.slice_rows(s.hard, r, 1) : s.soft);
      break;
    }
    Var<T> soft = gumbel_softmax(g, logits, opt.tau, noise);
    StSample<T> s = straight_through(g, soft);
    Var<T> row = opt.straight_through ? s.hard : soft;
    h.soft.push_back(soft);
    h.ids.push_back(s.chosen_ids.front());
    h.rows.push_back(row);
    slots.push_back(TokenSlot<T>::of_row(row));
    context_ids.push_back(s.chosen_ids.front());
  }
  return h;
}

template <typename T>
std::vector<TokenSlot<T>> hypothesis_slots(const Hypothesis<T>& h) {
  std::vector<TokenSlot<T>> out;
  for (const auto& r : h.rows) out.push_back(TokenSlot<T>::of_row(r));
  return out;
}

/// Same length as the hypothesis, every slot a zero embedding.
template <typename T>
std::vector<TokenSlot<T>> zeroed_slots(std::size_t length) {
  return std::vector<TokenSlot<T>>(length, TokenSlot<T>::zero());
}

template <typename T>
struct SimilarityClassifier {
  Var<T> embedding;  // [V×d_sim]

  SimilarityClassifier() = default;
  SimilarityClassifier(std::size_t vocab_size, std::size_t dim, double init_std,
                       std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, init_std);
    std::vector<T> v(vocab_size * dim);
    for (auto& x : v) x = static_cast<T>(normal(rng));
    embedding = make_param<T>({vocab_size, dim}, std::move(v));
  }
};

/// Mean embedding of each candidate, stacked [n×d].
template <typename T>
Var<T> candidate_means(Graph<T>& g, const Var<T>& table,
                       const std::vector<std::vector<int>>& candidates) {
  std::vector<Var<T>> rows;
  rows.reserve(candidates.size());
  for (const auto& a : candidates) {
    if (a.empty()) throw ContractError("empty answer candidate");
    Var<T> e = g.embedding_lookup(table, a);
    rows.push_back(a.size() == 1 ? e : g.mean_rows(e));
  }
  return g.concat_rows(rows);
}

/// s_i = average over (hypothesis token, candidate token) pairs of the
/// embedding dot product. Never looks at the question. Returns [1×n].
template <typename T>
Var<T> similarity_scores(Graph<T>& g, const Var<T>& table,
                         std::span<const TokenSlot<T>> hypothesis,
                         const std::vector<std::vector<int>>& candidates) {
  if (hypothesis.empty()) throw ContractError("similarity_scores needs a non-empty hypothesis");
  Var<T> hyp = embed_slots(g, table, hypothesis);
  Var<T> hyp_mean = hypothesis.size() == 1 ? hyp : g.mean_rows(hyp);
  return g.matmul_bt(hyp_mean, candidate_means(g, table, candidates));
}

template <typename T>
struct LmClassifier {
  ToyLm<T> lm;
  Var<T> w;  // [1×d]

  LmClassifier() = default;
  LmClassifier(ToyLm<T> backbone, std::uint64_t seed) : lm(std::move(backbone)) {
    const std::size_t d = lm.config().d_model;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, lm.config().init_std);
    std::vector<T> v(d);
    for (auto& x : v) x = static_cast<T>(normal(rng));
    w = make_param<T>({1, d}, std::move(v));
  }
};

namespace detail {
template <typename T>
Var<T> score_sequences(Graph<T>& g, const LmClassifier<T>& cls,
                       const std::vector<std::vector<TokenSlot<T>>>& inputs) {
  std::vector<Var<T>> scores;
  scores.reserve(inputs.size());
  for (const auto& in : inputs) {
    Var<T> gi = summary_vector(g, cls.lm, std::span<const TokenSlot<T>>(in));
    scores.push_back(g.matmul_bt(gi, cls.w));
  }
  return g.concat_cols(scores);
}
}  // namespace detail

/// For each candidate: s_i = wᵀ g_i with g_i the last hidden state of
/// [BOS; q; SEP; a_i; SEP; c]. Returns [1×n].
template <typename T>
Var<T> lm_classifier_scores(Graph<T>& g, const LmClassifier<T>& cls, std::span<const int> question,
                            std::span<const TokenSlot<T>> hypothesis,
                            const std::vector<std::vector<int>>& candidates) {
  if (hypothesis.empty()) throw ContractError("lm_classifier_scores needs a hypothesis");
  // Embed the hypothesis once; every candidate sequence reuses the rows.
  std::vector<TokenSlot<T>> hyp;
  hyp.reserve(hypothesis.size());
  for (const auto& s : hypothesis)
    hyp.push_back(s.kind == TokenSlot<T>::Kind::Row
                      ? TokenSlot<T>::of_embedded(g.embedding_rows(cls.lm.token_embedding(), s.row))
                      : s);
  std::vector<std::vector<TokenSlot<T>>> inputs;
  for (const auto& a : candidates) {
    if (a.empty()) throw ContractError("empty answer candidate");
    std::vector<TokenSlot<T>> in = id_slots<T>(generator_context(question));
    for (int id : a) in.push_back(TokenSlot<T>::of_id(id));
    in.push_back(TokenSlot<T>::of_id(Vocab::kSep));
    in.insert(in.end(), hyp.begin(), hyp.end());
    inputs.push_back(std::move(in));
  }
  return detail::score_sequences(g, cls, inputs);
}

/// End-to-end baseline: g_i from [BOS; q; SEP; a_i], no hypothesis.
template <typename T>
Var<T> e2e_scores(Graph<T>& g, const LmClassifier<T>& cls, std::span<const int> question,
                  const std::vector<std::vector<int>>& candidates) {
  std::vector<std::vector<TokenSlot<T>>> inputs;
  for (const auto& a : candidates) {
    if (a.empty()) throw ContractError("empty answer candidate");
    std::vector<int> ids = generator_context(question);
    ids.insert(ids.end(), a.begin(), a.end());
    inputs.push_back(id_slots<T>(ids));
  }
  return detail::score_sequences(g, cls, inputs);
}

/// NoInteraction baseline: the question alone is encoded; candidates are
/// scored by the mean dot product of the final hidden state with the
/// encoder's own embeddings of the candidate tokens.
template <typename T>
Var<T> no_interaction_scores(Graph<T>& g, const ToyLm<T>& encoder, std::span<const int> question,
                             const std::vector<std::vector<int>>& candidates) {
  if (question.empty()) throw ContractError("no_interaction_scores needs a question");
  std::vector<int> ids;
  ids.push_back(Vocab::kBos);
  ids.insert(ids.end(), question.begin(), question.end());
  Var<T> g_final = summary_vector(g, encoder, std::span<const int>(ids));
  return g.matmul_bt(g_final, candidate_means(g, encoder.token_embedding(), candidates));
}

struct Prediction {
  std::vector<double> distribution;
  int index = 0;
};

/// softmax over the scores; ties resolve to the lowest index.
template <typename T>
Prediction predict(std::span<const T> scores) {
  if (scores.size() < 2) throw ContractError("predict needs at least two scores");
  Prediction p;
  const double mx = static_cast<double>(*std::max_element(scores.begin(), scores.end()));
  double z = 0.0;
  for (T s : scores) z += std::exp(static_cast<double>(s) - mx);
  for (T s : scores) p.distribution.push_back(std::exp(static_cast<double>(s) - mx) / z);
  p.index = static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
  return p;
}

/// Greedy decoding for at most max_len tokens; stops before EOS.
template <typename T>
std::vector<int> supgen_decode(const ToyLm<T>& generator, std::span<const int> question,
                               std::size_t max_len) {
  std::vector<int> ids = generator_context(question);
  std::vector<int> out;
  for (std::size_t step = 0; step < max_len && ids.size() < generator.config().max_len; ++step) {
    Graph<T> g(0, false);
    Var<T> logits = lm_forward(g, generator, std::span<const int>(ids), Logits::Last).logits;
    const auto& v = logits->value;
    const int next = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
    if (next == Vocab::kEos) break;
    out.push_back(next);
    ids.push_back(next);
  }
  return out;
}

}  // namespace hypogen
