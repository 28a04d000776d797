#pragma once

// Training schedules, evaluation metrics, the zero-hypothesis ablation and
// checkpointing of model bundles.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "hypogen/checkpoint.hpp"
#include "hypogen/data.hpp"
#include "hypogen/losses.hpp"
#include "hypogen/optim.hpp"
#include "hypogen/qa_model.hpp"
#include "hypogen/toylm.hpp"

namespace hypogen {

enum class Mode { SimOnly = 0, Joint = 1, E2E = 2, NoInteraction = 3, SupGen = 4 };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::SimOnly: return "sim_only";
    case Mode::Joint: return "joint";
    case Mode::E2E: return "e2e";
    case Mode::NoInteraction: return "no_interaction";
    case Mode::SupGen: return "supgen";
  }
  return "?";
}

inline Mode parse_mode(std::string_view text) {
  std::string s(text);
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (Mode m : {Mode::SimOnly, Mode::Joint, Mode::E2E, Mode::NoInteraction, Mode::SupGen})
    if (s == mode_name(m)) return m;
  throw ConfigError("unknown mode '" + std::string(text) + "'");
}

inline bool uses_generator(Mode m) {
  return m == Mode::SimOnly || m == Mode::Joint || m == Mode::SupGen;
}

inline bool has_hypothesis_slot(Mode m) { return m == Mode::SimOnly || m == Mode::Joint; }

struct TrainConfig {
  Mode mode = Mode::SimOnly;
  std::size_t epochs = 30;
  std::size_t warmup_epochs = 5;
  double learning_rate = 3e-4;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  std::size_t hyp_len = 1;
  std::size_t top_k = 0;
  double tau = 1.0;
  double lambda_kld = 0.001;
  double lambda_rep = 0.5;
  bool gumbel = true;
  bool straight_through = true;
  std::size_t sim_dim = 32;
  double sim_init_std = 0.3;

  void validate() const {
    if (warmup_epochs > epochs) throw ConfigError("warmup_epochs exceeds epochs");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (lambda_kld < 0.0 || lambda_rep < 0.0) throw ConfigError("loss weights must be >= 0");
    if (sim_dim == 0) throw ConfigError("sim_dim must be positive");
    if (uses_generator(mode) && hyp_len == 0 && top_k == 0)
      throw ConfigError("one of hyp_len or top_k must be positive");
    if (mode == Mode::SupGen && top_k > 0)
      throw ConfigError("supgen decodes step by step; top_k must be 0");
  }

  GenOptions gen_options(bool training) const {
    GenOptions o;
    o.hyp_len = top_k > 0 ? top_k : hyp_len;
    o.top_k = top_k;
    o.tau = tau;
    o.noise = training && gumbel;
    o.straight_through = training ? straight_through : true;
    return o;
  }
};

struct PretrainConfig {
  std::size_t epochs = 12;
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
};

struct Metrics {
  std::size_t epoch = 0;
  std::size_t count = 0;
  double accuracy = 0.0;
  double accuracy_sim = std::numeric_limits<double>::quiet_NaN();  // joint mode only
  double repetition_rate = 0.0;
  double mean_kld = 0.0;
  double qa_sim = 0.0;  // mean log-likelihood components
  double qa_lm = 0.0;
  double train_loss = std::numeric_limits<double>::quiet_NaN();
  double train_kld = std::numeric_limits<double>::quiet_NaN();
  double train_repetition = std::numeric_limits<double>::quiet_NaN();

  nlohmann::json to_json() const {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); };
    return {{"epoch", epoch},
            {"count", count},
            {"accuracy", accuracy},
            {"accuracy_sim", num(accuracy_sim)},
            {"repetition_rate", repetition_rate},
            {"mean_kld", mean_kld},
            {"qa_sim", qa_sim},
            {"qa_lm", qa_lm},
            {"train_loss", num(train_loss)},
            {"train_kld", num(train_kld)},
            {"train_repetition", num(train_repetition)}};
  }
};

/// Every parameter set a mode needs, plus optimizer state and progress.
struct ModelBundle {
  Mode mode = Mode::SimOnly;
  LmConfig lm;
  std::size_t hyp_len = 1;
  std::size_t top_k = 0;
  std::size_t sim_dim = 32;
  std::optional<ToyLm<float>> generator;
  std::optional<ToyLm<float>> reference;  // frozen copy of the pretrained LM
  std::optional<SimilarityClassifier<float>> sim;
  std::optional<LmClassifier<float>> classifier;  // LM classifier, also the E2E model
  std::optional<ToyLm<float>> encoder;            // NoInteraction
  AdamState adam;
  std::size_t epochs_done = 0;

  /// All parameters with stable prefixed names, frozen ones included.
  NamedParams parameters() const {
    NamedParams out;
    auto add_lm = [&](const std::string& prefix, const std::optional<ToyLm<float>>& lm_) {
      if (lm_)
        for (const auto& [n, p] : lm_->params().entries()) out.emplace_back(prefix + n, p);
    };
    add_lm("gen.", generator);
    add_lm("ref.", reference);
    if (sim) out.emplace_back("sim.emb", sim->embedding);
    if (classifier) {
      for (const auto& [n, p] : classifier->lm.params().entries()) out.emplace_back("cls." + n, p);
      out.emplace_back("cls.w", classifier->w);
    }
    add_lm("enc.", encoder);
    return out;
  }

  /// Parameters the optimizer updates in the current phase.
  NamedParams trainable(bool lm_classifier_active) const {
    NamedParams out;
    for (auto& [name, p] : parameters()) {
      const std::string prefix = name.substr(0, name.find('.'));
      bool on = false;
      switch (mode) {
        case Mode::SimOnly: on = prefix == "gen" || prefix == "sim"; break;
        case Mode::Joint:
          on = prefix == "gen" || prefix == "sim" || (prefix == "cls" && lm_classifier_active);
          break;
        case Mode::E2E: on = prefix == "cls"; break;
        case Mode::NoInteraction: on = prefix == "enc"; break;
        case Mode::SupGen: on = prefix == "gen"; break;
      }
      if (on) out.emplace_back(name, p);
    }
    return out;
  }

  GenOptions eval_options() const {
    GenOptions o;
    o.hyp_len = top_k > 0 ? top_k : hyp_len;
    o.top_k = top_k;
    o.noise = false;
    o.straight_through = true;
    return o;
  }
};

/// Builds the bundle for cfg.mode; every LM starts from the pretrained one.
inline ModelBundle make_bundle(const ToyLm<float>& pretrained, const TrainConfig& cfg) {
  cfg.validate();
  ModelBundle b;
  b.mode = cfg.mode;
  b.lm = pretrained.config();
  b.hyp_len = cfg.hyp_len;
  b.top_k = cfg.top_k;
  b.sim_dim = cfg.sim_dim;
  if (uses_generator(cfg.mode)) {
    b.generator = pretrained.clone();
    b.reference = pretrained.clone(/*frozen=*/true);
    b.sim = SimilarityClassifier<float>(b.lm.vocab_size, cfg.sim_dim, cfg.sim_init_std,
                                        cfg.seed ^ 0x5151ULL);
  }
  if (cfg.mode == Mode::Joint || cfg.mode == Mode::E2E)
    b.classifier = LmClassifier<float>(pretrained.clone(), cfg.seed ^ 0xC1A5ULL);
  if (cfg.mode == Mode::NoInteraction) b.encoder = pretrained.clone();
  return b;
}

/// Fraction of hypotheses tokens that repeat an earlier token of the same
/// hypothesis.
inline double repetition_rate(const std::vector<std::vector<int>>& hypotheses) {
  std::size_t repeated = 0, total = 0;
  for (const auto& h : hypotheses) {
    if (h.empty()) throw ContractError("repetition_rate: empty hypothesis");
    std::set<int> seen;
    for (int id : h) {
      if (!seen.insert(id).second) ++repeated;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(repeated) / static_cast<double>(total);
}

/// Fraction of score vectors whose predicted index equals the gold index.
inline double accuracy_from_scores(const std::vector<std::vector<double>>& scores,
                                   std::span<const int> gold) {
  if (scores.size() != gold.size()) throw DimensionError("accuracy: scores and gold differ in count");
  if (scores.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    correct += predict(std::span<const double>(scores[i])).index == gold[i];
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

/// SupGen target: the gold answer tokens, EOS-padded or truncated to length.
inline std::vector<int> supgen_target(const McqExample& ex, std::size_t length) {
  std::vector<int> t = ex.candidates.at(static_cast<std::size_t>(ex.gold));
  t.resize(length, Vocab::kEos);
  return t;
}

namespace detail {

inline std::vector<float> reference_probs(const ToyLm<float>& reference,
                                          const std::vector<int>& context) {
  Graph<float> g(0, false);
  Var<float> logits =
      lm_forward(g, reference, std::span<const int>(context), Logits::Last).logits;
  return g.softmax(logits, -1)->value;
}

inline std::uint64_t example_seed(std::uint64_t seed, std::size_t epoch, std::size_t position) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(position)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what);
}

}  // namespace detail

/// Builds one example's loss on `g`. `lm_classifier_active` switches the
/// joint objective on after the warm-up.
inline LossBreakdown<float> example_loss(Graph<float>& g, const ModelBundle& b,
                                         const McqExample& ex, const TrainConfig& cfg,
                                         bool lm_classifier_active) {
  using V = Var<float>;
  switch (b.mode) {
    case Mode::E2E: {
      V s = e2e_scores(g, *b.classifier, ex.question, ex.candidates);
      return combine_losses<float>(g, nullptr, qa_objective_from_scores(g, s, ex.gold), nullptr,
                                   nullptr, 0.0, 0.0);
    }
    case Mode::NoInteraction: {
      V s = no_interaction_scores(g, *b.encoder, ex.question, ex.candidates);
      return combine_losses<float>(g, nullptr, qa_objective_from_scores(g, s, ex.gold), nullptr,
                                   nullptr, 0.0, 0.0);
    }
    case Mode::SupGen: {
      const auto target = supgen_target(ex, cfg.hyp_len);
      V nll = supgen_loss(g, *b.generator, ex.question, target);
      LossBreakdown<float> out;
      out.qa_sim = -static_cast<double>(nll->item());
      out.total = nll;
      return out;
    }
    case Mode::SimOnly:
    case Mode::Joint:
      break;
  }
  Hypothesis<float> h = generate_hypothesis(g, *b.generator, ex.question,
                                            cfg.gen_options(/*training=*/true), g.rng());
  const auto slots = hypothesis_slots(h);
  V qa_sim = qa_objective_from_scores(
      g, similarity_scores(g, b.sim->embedding, std::span<const TokenSlot<float>>(slots), ex.candidates),
      ex.gold);
  V qa_lm;
  if (b.mode == Mode::Joint && lm_classifier_active)
    qa_lm = qa_objective_from_scores(
        g, lm_classifier_scores(g, *b.classifier, ex.question, std::span<const TokenSlot<float>>(slots), ex.candidates),
        ex.gold);

  V kld, rep;
  for (std::size_t step = 0; step < h.logprobs.size(); ++step) {
    if (cfg.lambda_kld > 0.0) {
      const auto ref = detail::reference_probs(*b.reference, h.contexts[step]);
      V k = kld_step(g, h.logprobs[step], std::span<const float>(ref));
      kld = kld ? g.add(kld, k) : k;
    }
    if (cfg.lambda_rep > 0.0 && step > 0) {
      V r = repetition_penalty(g, h.logprobs[step], std::span<const int>(h.ids.data(), step));
      rep = rep ? g.add(rep, r) : r;
    }
  }
  if (cfg.lambda_rep > 0.0 && !rep) rep = g.zeros({});
  return combine_losses(g, qa_sim, qa_lm, kld, rep, cfg.lambda_kld, cfg.lambda_rep);
}

struct EvalRecord {
  std::vector<int> hypothesis;
  int predicted = 0;
  int predicted_sim = -1;
  int gold = 0;
};

struct EvalResult {
  Metrics metrics;
  std::vector<EvalRecord> records;
};

/// Deterministic evaluation: no Gumbel noise, argmax decoding. With
/// zero_hypothesis the classifier sees zero vectors in the hypothesis slot.
inline EvalResult evaluate_detailed(const ModelBundle& b, std::span<const McqExample> data,
                                    bool zero_hypothesis = false) {
  if (zero_hypothesis && !has_hypothesis_slot(b.mode))
    throw ContractError(std::string("zero-hypothesis ablation needs a hypothesis slot; mode ") +
                        mode_name(b.mode) + " has none");
  EvalResult out;
  Metrics& m = out.metrics;
  std::size_t correct = 0, correct_sim = 0, kld_steps = 0;
  std::vector<std::vector<int>> hyps;
  std::mt19937_64 unused_rng(0);
  for (const auto& ex : data) {
    Graph<float> g(0, false);
    EvalRecord rec;
    rec.gold = ex.gold;
    Var<float> scores;
    switch (b.mode) {
      case Mode::E2E:
        scores = e2e_scores(g, *b.classifier, ex.question, ex.candidates);
        break;
      case Mode::NoInteraction:
        scores = no_interaction_scores(g, *b.encoder, ex.question, ex.candidates);
        break;
      case Mode::SupGen: {
        rec.hypothesis = supgen_decode(*b.generator, ex.question, b.hyp_len);
        if (rec.hypothesis.empty()) {
          scores = g.zeros({1, ex.candidates.size()});
        } else {
          auto slots = id_slots<float>(rec.hypothesis);
          scores = similarity_scores(g, b.sim->embedding, std::span<const TokenSlot<float>>(slots), ex.candidates);
          hyps.push_back(rec.hypothesis);
        }
        break;
      }
      case Mode::SimOnly:
      case Mode::Joint: {
        Hypothesis<float> h =
            generate_hypothesis(g, *b.generator, ex.question, b.eval_options(), unused_rng);
        rec.hypothesis = h.ids;
        hyps.push_back(h.ids);
        for (std::size_t step = 0; step < h.logprobs.size(); ++step) {
          const auto ref = detail::reference_probs(*b.reference, h.contexts[step]);
          m.mean_kld += kld_step(g, h.logprobs[step], std::span<const float>(ref))->item();
          ++kld_steps;
        }
        const auto slots = zero_hypothesis ? zeroed_slots<float>(h.size()) : hypothesis_slots(h);
        Var<float> s_sim =
            similarity_scores(g, b.sim->embedding, std::span<const TokenSlot<float>>(slots), ex.candidates);
        m.qa_sim += qa_objective_from_scores(g, s_sim, ex.gold)->item();
        if (b.mode == Mode::Joint) {
          scores = lm_classifier_scores(g, *b.classifier, ex.question,
                                        std::span<const TokenSlot<float>>(slots), ex.candidates);
          rec.predicted_sim = predict<float>(s_sim->value).index;
          if (rec.predicted_sim == ex.gold) ++correct_sim;
        } else {
          scores = s_sim;
        }
        break;
      }
    }
    if (b.mode != Mode::SimOnly) m.qa_lm += qa_objective_from_scores(g, scores, ex.gold)->item();
    rec.predicted = predict<float>(scores->value).index;
    if (rec.predicted == ex.gold) ++correct;
    out.records.push_back(std::move(rec));
  }
  m.count = data.size();
  if (m.count > 0) {
    const double n = static_cast<double>(m.count);
    m.accuracy = static_cast<double>(correct) / n;
    m.qa_sim /= n;
    m.qa_lm /= n;
    if (b.mode == Mode::Joint) m.accuracy_sim = static_cast<double>(correct_sim) / n;
  }
  if (kld_steps > 0) m.mean_kld /= static_cast<double>(kld_steps);
  if (!hyps.empty()) m.repetition_rate = repetition_rate(hyps);
  return out;
}

inline Metrics evaluate(const ModelBundle& b, std::span<const McqExample> data,
                        bool zero_hypothesis = false) {
  return evaluate_detailed(b, data, zero_hypothesis).metrics;
}

struct AblationResult {
  Metrics with_hypothesis;
  Metrics without_hypothesis;
  double delta_pct = 0.0;  // (without - with) / with × 100
};

inline AblationResult ablate_zero_hypothesis(const ModelBundle& b,
                                             std::span<const McqExample> data) {
  if (!has_hypothesis_slot(b.mode))
    throw ContractError(std::string("ablation is defined for sim_only and joint models, not ") +
                        mode_name(b.mode));
  AblationResult r;
  r.with_hypothesis = evaluate(b, data, false);
  r.without_hypothesis = evaluate(b, data, true);
  const double with = r.with_hypothesis.accuracy;
  r.delta_pct = with > 0.0 ? (r.without_hypothesis.accuracy - with) / with * 100.0 : 0.0;
  return r;
}

using EpochCallback = std::function<void(const Metrics&)>;

/// Runs epochs [b.epochs_done, cfg.epochs). Every stochastic choice derives
/// from (cfg.seed, epoch, position), so a bundle restored from a checkpoint
/// written after epoch e continues exactly as an uninterrupted run would.
inline std::vector<Metrics> train(ModelBundle& b, std::span<const McqExample> train_set,
                                  std::span<const McqExample> dev_set, const TrainConfig& cfg,
                                  const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (cfg.mode != b.mode)
    throw ConfigError(std::string("config mode ") + mode_name(cfg.mode) +
                      " does not match bundle mode " + mode_name(b.mode));
  if (uses_generator(b.mode) && (cfg.hyp_len != b.hyp_len || cfg.top_k != b.top_k))
    throw ConfigError("hypothesis length in config does not match the bundle");
  if (train_set.empty() && cfg.epochs > b.epochs_done) throw ContractError("empty training set");

  std::vector<Metrics> history;
  for (std::size_t epoch = b.epochs_done; epoch < cfg.epochs; ++epoch) {
    const bool lm_active = b.mode == Mode::Joint && epoch >= cfg.warmup_epochs;
    const NamedParams params = b.trainable(lm_active);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(detail::example_seed(cfg.seed, epoch, ~std::size_t{0}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0, kld_sum = 0.0, rep_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      for (const auto& [_, p] : params) p->grad.clear();
      const float inv = 1.0f / static_cast<float>(stop - start);
      for (std::size_t pos = start; pos < stop; ++pos) {
        Graph<float> g(detail::example_seed(cfg.seed, epoch, pos));
        auto loss = example_loss(g, b, train_set[order[pos]], cfg, lm_active);
        const double total = loss.total->item();
        detail::require_finite(total, "training loss");
        loss_sum += total;
        kld_sum += loss.kld;
        rep_sum += loss.repetition;
        g.backward(g.scale(loss.total, inv));
      }
      adam_step(params, b.adam, cfg.learning_rate);
    }
    ++b.epochs_done;
    Metrics m = dev_set.empty() ? Metrics{} : evaluate(b, dev_set);
    m.epoch = b.epochs_done;
    const double n = static_cast<double>(std::max<std::size_t>(train_set.size(), 1));
    m.train_loss = loss_sum / n;
    m.train_kld = kld_sum / n;
    m.train_repetition = rep_sum / n;
    history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return history;
}

// ---- language-model pretraining ------------------------------------------

/// Next-token pretraining on the corpus. Returns the mean loss per epoch.
inline std::vector<double> pretrain(ToyLm<float>& lm, const std::vector<std::vector<int>>& corpus,
                                    const PretrainConfig& cfg,
                                    const std::function<void(std::size_t, double)>& on_epoch = {}) {
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
  const NamedParams params(lm.params().entries().begin(), lm.params().entries().end());
  AdamState adam;
  std::vector<double> history;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(detail::example_seed(cfg.seed, epoch, ~std::size_t{0}));
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      lm.params().zero_grad();
      const float inv = 1.0f / static_cast<float>(stop - start);
      for (std::size_t pos = start; pos < stop; ++pos) {
        Graph<float> g;
        Var<float> loss = lm_nll(g, lm, std::span<const int>(corpus[order[pos]]));
        detail::require_finite(loss->item(), "pretraining loss");
        sum += loss->item();
        g.backward(g.scale(loss, inv));
      }
      adam_step(params, adam, cfg.learning_rate);
    }
    history.push_back(corpus.empty() ? 0.0 : sum / static_cast<double>(corpus.size()));
    if (on_epoch) on_epoch(epoch + 1, history.back());
  }
  return history;
}

/// Fraction of distinct corpus sentences "<bos> h is a c ..." for which the
/// LM's most likely token after "<bos> h is a" is c.
inline double hypernym_probe(const ToyLm<float>& lm, const std::vector<std::vector<int>>& corpus) {
  std::set<std::vector<int>> seen;
  std::size_t hits = 0;
  for (const auto& s : corpus) {
    if (s.size() < 5) continue;
    std::vector<int> prefix(s.begin(), s.begin() + 4);
    if (!seen.insert(prefix).second) continue;
    Graph<float> g(0, false);
    const auto& v = lm_forward(g, lm, std::span<const int>(prefix), Logits::Last).logits->value;
    if (std::max_element(v.begin(), v.end()) - v.begin() == s[4]) ++hits;
  }
  return seen.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(seen.size());
}

// ---- checkpoints -----------------------------------------------------------

namespace detail {

inline NamedTensor scalar_tensor(const std::string& name, double v) {
  return {name, {1}, {static_cast<float>(v)}};
}

inline NamedTensor lm_meta(const LmConfig& c) {
  return {"meta.lm", {5}, {static_cast<float>(c.vocab_size), static_cast<float>(c.d_model),
                           static_cast<float>(c.n_layers), static_cast<float>(c.n_heads),
                           static_cast<float>(c.max_len)}};
}

inline LmConfig lm_from_meta(const NamedTensor& t) {
  if (t.data.size() != 5) throw FormatError("malformed meta.lm");
  LmConfig c;
  c.vocab_size = static_cast<std::size_t>(t.data[0]);
  c.d_model = static_cast<std::size_t>(t.data[1]);
  c.n_layers = static_cast<std::size_t>(t.data[2]);
  c.n_heads = static_cast<std::size_t>(t.data[3]);
  c.max_len = static_cast<std::size_t>(t.data[4]);
  return c;
}

class TensorIndex {
 public:
  explicit TensorIndex(const std::vector<NamedTensor>& tensors) {
    for (const auto& t : tensors) by_name_[t.name] = &t;
  }
  const NamedTensor& at(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw FormatError("checkpoint lacks tensor " + name);
    return *it->second;
  }
  bool contains(const std::string& name) const { return by_name_.count(name) > 0; }
  double scalar(const std::string& name) const { return at(name).data.at(0); }

  void fill(const std::string& name, const Var<float>& p) const {
    const NamedTensor& t = at(name);
    if (t.shape != p->shape)
      throw FormatError("tensor " + name + " has shape " + shape_str(t.shape) + ", expected " +
                        shape_str(p->shape));
    p->value = t.data;
  }

 private:
  std::map<std::string, const NamedTensor*> by_name_;
};

}  // namespace detail

inline std::vector<NamedTensor> lm_tensors(const ToyLm<float>& lm) {
  std::vector<NamedTensor> out{detail::lm_meta(lm.config())};
  for (const auto& [name, p] : lm.params().entries())
    out.push_back({"lm." + name, p->shape, p->value});
  return out;
}

inline ToyLm<float> lm_from_tensors(const std::vector<NamedTensor>& tensors) {
  detail::TensorIndex idx(tensors);
  ToyLm<float> lm(detail::lm_from_meta(idx.at("meta.lm")), 0);
  for (const auto& [name, p] : lm.params().entries()) idx.fill("lm." + name, p);
  return lm;
}

inline void save_lm(const std::string& path, const ToyLm<float>& lm) {
  save_tensors(path, lm_tensors(lm));
}

inline ToyLm<float> load_lm(const std::string& path) { return lm_from_tensors(load_tensors(path)); }

inline std::vector<NamedTensor> bundle_tensors(const ModelBundle& b) {
  std::vector<NamedTensor> out;
  out.push_back(detail::scalar_tensor("meta.mode", static_cast<double>(b.mode)));
  out.push_back(detail::lm_meta(b.lm));
  out.push_back({"meta.gen", {3}, {static_cast<float>(b.hyp_len), static_cast<float>(b.top_k),
                                   static_cast<float>(b.sim_dim)}});
  out.push_back(detail::scalar_tensor("meta.epochs_done", static_cast<double>(b.epochs_done)));
  for (const auto& [name, p] : b.parameters()) out.push_back({name, p->shape, p->value});
  for (const auto& [name, s] : b.adam) {
    const Shape shape{s.m.size()};
    out.push_back({"adam.m." + name, shape, s.m});
    out.push_back({"adam.v." + name, shape, s.v});
    out.push_back(detail::scalar_tensor("adam.step." + name, static_cast<double>(s.step)));
  }
  return out;
}

inline ModelBundle bundle_from_tensors(const std::vector<NamedTensor>& tensors) {
  detail::TensorIndex idx(tensors);
  const double mode = idx.scalar("meta.mode");
  if (mode < 0 || mode > 4) throw FormatError("unknown mode in checkpoint");
  ModelBundle b;
  b.mode = static_cast<Mode>(static_cast<int>(mode));
  b.lm = detail::lm_from_meta(idx.at("meta.lm"));
  const auto& gen = idx.at("meta.gen").data;
  if (gen.size() != 3) throw FormatError("malformed meta.gen");
  b.hyp_len = static_cast<std::size_t>(gen[0]);
  b.top_k = static_cast<std::size_t>(gen[1]);
  b.sim_dim = static_cast<std::size_t>(gen[2]);
  b.epochs_done = static_cast<std::size_t>(idx.scalar("meta.epochs_done"));
  if (idx.contains("gen.tok_emb")) b.generator = ToyLm<float>(b.lm, 0);
  if (idx.contains("ref.tok_emb")) b.reference = ToyLm<float>(b.lm, 0).clone(/*frozen=*/true);
  if (idx.contains("sim.emb"))
    b.sim = SimilarityClassifier<float>(b.lm.vocab_size, b.sim_dim, 0.0, 0);
  if (idx.contains("cls.w")) b.classifier = LmClassifier<float>(ToyLm<float>(b.lm, 0), 0);
  if (idx.contains("enc.tok_emb")) b.encoder = ToyLm<float>(b.lm, 0);
  for (const auto& [name, p] : b.parameters()) idx.fill(name, p);
  for (const auto& t : tensors) {
    if (t.name.rfind("adam.m.", 0) != 0) continue;
    const std::string name = t.name.substr(7);
    AdamMoments s;
    s.m = t.data;
    s.v = idx.at("adam.v." + name).data;
    s.step = static_cast<std::size_t>(idx.scalar("adam.step." + name));
    b.adam[name] = std::move(s);
  }
  return b;
}

inline void save_checkpoint(const ModelBundle& b, const std::string& path) {
  save_tensors(path, bundle_tensors(b));
}

inline ModelBundle load_checkpoint(const std::string& path) {
  return bundle_from_tensors(load_tensors(path));
}

}  // namespace hypogen
