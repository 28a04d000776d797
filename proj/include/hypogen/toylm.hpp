#pragma once

// Tiny pre-norm causal transformer LM with tied input/output embeddings.
// Serves as the hypothesis generator, the backbone of the LM-based and
// end-to-end classifiers, and (as a frozen clone) the reference LM.

#include <cmath>
#include <cstddef>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hypogen/autodiff.hpp"

namespace hypogen {

struct LmConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t max_len = 64;
  double init_std = 0.02;
};

/// Ordered name → parameter map. Order is insertion order so iteration (and
/// therefore optimizer and checkpoint layout) is deterministic.
template <typename T>
class ParamStore {
 public:
  Var<T> add(const std::string& name, Shape shape, std::vector<T> values) {
    if (index_.count(name)) throw ContractError("duplicate parameter " + name);
    auto p = make_param<T>(std::move(shape), std::move(values));
    index_[name] = entries_.size();
    entries_.emplace_back(name, p);
    return p;
  }

  const Var<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter " + name);
    return entries_[it->second].second;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const std::vector<std::pair<std::string, Var<T>>>& entries() const { return entries_; }

  void zero_grad() {
    for (auto& [_, p] : entries_) p->grad.clear();
  }

  /// Deep copy with fresh nodes.
  ParamStore clone(bool requires_grad = true) const {
    ParamStore out;
    for (const auto& [name, p] : entries_) {
      auto q = out.add(name, p->shape, p->value);
      q->requires_grad = requires_grad;
    }
    return out;
  }

  void set_requires_grad(bool on) {
    for (auto& [_, p] : entries_) p->requires_grad = on;
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

/// One input position. Ids take the cheap gather path; rows carry a
/// distribution (or straight-through one-hot) over the vocabulary so that
/// gradients reach whoever produced them; embedded rows are already [1×d];
/// zero slots contribute a zero token embedding.
template <typename T>
struct TokenSlot {
  enum class Kind { Id, Row, Embedded, Zero };
  Kind kind = Kind::Id;
  int id = 0;
  Var<T> row;

  static TokenSlot of_id(int id) { return {Kind::Id, id, nullptr}; }
  static TokenSlot of_row(Var<T> r) { return {Kind::Row, -1, std::move(r)}; }
  static TokenSlot of_embedded(Var<T> e) { return {Kind::Embedded, -1, std::move(e)}; }
  static TokenSlot zero() { return {Kind::Zero, -1, nullptr}; }
};

template <typename T>
std::vector<TokenSlot<T>> id_slots(std::span<const int> ids) {
  std::vector<TokenSlot<T>> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(TokenSlot<T>::of_id(id));
  return out;
}

/// Embeds a slot sequence with `table` [V×d] → [T×d]. Consecutive ids are
/// gathered in one op.
template <typename T>
Var<T> embed_slots(Graph<T>& g, const Var<T>& table, std::span<const TokenSlot<T>> slots) {
  const std::size_t d = table->shape.at(1);
  std::vector<Var<T>> parts;
  std::vector<int> run;
  auto flush = [&] {
    if (!run.empty()) {
      parts.push_back(g.embedding_lookup(table, run));
      run.clear();
    }
  };
  for (const auto& s : slots) {
    using K = typename TokenSlot<T>::Kind;
    switch (s.kind) {
      case K::Id:
        run.push_back(s.id);
        break;
      case K::Row:
        flush();
        parts.push_back(g.embedding_rows(table, s.row));
        break;
      case K::Embedded:
        flush();
        if (s.row->size() != d)
          throw DimensionError("embedded slot " + shape_str(s.row->shape) + " for width " +
                               std::to_string(d));
        parts.push_back(s.row->shape.size() == 2 ? s.row : g.reshape(s.row, {1, d}));
        break;
      case K::Zero:
        flush();
        parts.push_back(g.zeros({1, d}));
        break;
    }
  }
  flush();
  if (parts.empty()) throw ContractError("cannot embed an empty token sequence");
  return parts.size() == 1 ? parts.front() : g.concat_rows(parts);
}

template <typename T>
class ToyLm {
 public:
  ToyLm() = default;

  ToyLm(const LmConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.vocab_size == 0) throw ContractError("ToyLm needs a non-empty vocabulary");
    if (cfg.n_heads == 0 || cfg.d_model % cfg.n_heads != 0)
      throw ContractError("d_model must be divisible by n_heads");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, cfg.init_std);
    auto gauss = [&](const std::string& name, Shape s) {
      std::vector<T> v(numel(s));
      for (auto& x : v) x = static_cast<T>(normal(rng));
      params_.add(name, std::move(s), std::move(v));
    };
    auto fill = [&](const std::string& name, Shape s, T value) {
      std::vector<T> v(numel(s), value);
      params_.add(name, std::move(s), std::move(v));
    };
    const std::size_t d = cfg.d_model, V = cfg.vocab_size;
    gauss("tok_emb", {V, d});
    gauss("pos_emb", {cfg.max_len, d});
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "h" + std::to_string(l) + ".";
      fill(p + "ln1.g", {d}, T(1));
      fill(p + "ln1.b", {d}, T(0));
      for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
        gauss(p + w, {d, d});
        fill(p + w + ".b", {d}, T(0));
      }
      fill(p + "ln2.g", {d}, T(1));
      fill(p + "ln2.b", {d}, T(0));
      gauss(p + "ff.w1", {d, 4 * d});
      fill(p + "ff.w1.b", {4 * d}, T(0));
      gauss(p + "ff.w2", {4 * d, d});
      fill(p + "ff.w2.b", {d}, T(0));
    }
    fill("lnf.g", {d}, T(1));
    fill("lnf.b", {d}, T(0));
  }

  const LmConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const Var<T>& token_embedding() const { return params_.get("tok_emb"); }

  /// Independent deep copy; a frozen copy never receives gradients.
  ToyLm clone(bool frozen = false) const {
    ToyLm out;
    out.cfg_ = cfg_;
    out.params_ = params_.clone(!frozen);
    return out;
  }

 private:
  LmConfig cfg_;
  ParamStore<T> params_;
};

enum class Logits { None, Last, All };

template <typename T>
struct LmOutput {
  Var<T> logits;  // [T×V], [1×V] or null depending on the request
  Var<T> hidden;  // [T×d] after the final layer norm
};

template <typename T>
LmOutput<T> lm_forward(Graph<T>& g, const ToyLm<T>& model, std::span<const TokenSlot<T>> tokens,
                       Logits want = Logits::All) {
  const auto& cfg = model.config();
  const auto& P = model.params();
  const std::size_t len = tokens.size();
  if (len == 0) throw ContractError("lm_forward on an empty sequence");
  if (len > cfg.max_len)
    throw LengthError("sequence of " + std::to_string(len) + " tokens exceeds max_len " +
                      std::to_string(cfg.max_len));
  const std::size_t d = cfg.d_model, heads = cfg.n_heads, dh = d / heads;

  Var<T> x = embed_slots(g, P.get("tok_emb"), tokens);
  x = g.add(x, g.slice_rows(P.get("pos_emb"), 0, len));

  std::vector<std::uint8_t> causal(len * len, 0);
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = i + 1; j < len; ++j) causal[i * len + j] = 1;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "h" + std::to_string(l) + ".";
    auto proj = [&](const Var<T>& in, const std::string& w) {
      return g.add_row(g.matmul(in, P.get(p + w)), P.get(p + w + ".b"));
    };
    Var<T> xn = g.layer_norm(x, P.get(p + "ln1.g"), P.get(p + "ln1.b"));
    Var<T> q = proj(xn, "attn.wq"), k = proj(xn, "attn.wk"), v = proj(xn, "attn.wv");
    std::vector<Var<T>> head_out;
    head_out.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      Var<T> qh = heads == 1 ? q : g.slice_cols(q, h * dh, dh);
      Var<T> kh = heads == 1 ? k : g.slice_cols(k, h * dh, dh);
      Var<T> vh = heads == 1 ? v : g.slice_cols(v, h * dh, dh);
      Var<T> scores = g.scale(g.matmul_bt(qh, kh), inv_sqrt);
      if (len > 1) scores = g.mask_fill(scores, causal, T(-1e9));
      head_out.push_back(g.matmul(g.softmax(scores, 1), vh));
    }
    Var<T> attn = heads == 1 ? head_out.front() : g.concat_cols(head_out);
    x = g.add(x, proj(attn, "attn.wo"));
    Var<T> xn2 = g.layer_norm(x, P.get(p + "ln2.g"), P.get(p + "ln2.b"));
    Var<T> ff = g.gelu(proj(xn2, "ff.w1"));
    x = g.add(x, proj(ff, "ff.w2"));
  }
  LmOutput<T> out;
  out.hidden = g.layer_norm(x, P.get("lnf.g"), P.get("lnf.b"));
  if (want == Logits::All)
    out.logits = g.matmul_bt(out.hidden, P.get("tok_emb"));
  else if (want == Logits::Last)
    out.logits = g.matmul_bt(g.slice_rows(out.hidden, len - 1, 1), P.get("tok_emb"));
  return out;
}

template <typename T>
LmOutput<T> lm_forward(Graph<T>& g, const ToyLm<T>& model, std::span<const int> ids,
                       Logits want = Logits::All) {
  auto slots = id_slots<T>(ids);
  return lm_forward(g, model, std::span<const TokenSlot<T>>(slots), want);
}

/// Mean next-token cross-entropy over a token-id sequence.
template <typename T>
Var<T> lm_nll(Graph<T>& g, const ToyLm<T>& model, std::span<const int> sequence) {
  if (sequence.size() < 2) throw ContractError("lm_nll needs at least two tokens");
  const std::size_t n = sequence.size() - 1;
  auto out = lm_forward(g, model, sequence.first(n), Logits::All);
  Var<T> logp = g.log_softmax(out.logits, 1);
  const std::size_t V = model.config().vocab_size;
  std::vector<T> target(n * V, T(0));
  for (std::size_t i = 0; i < n; ++i) {
    if (sequence[i + 1] < 0 || static_cast<std::size_t>(sequence[i + 1]) >= V)
      throw IndexError("target id " + std::to_string(sequence[i + 1]) + " outside vocabulary");
    target[i * V + static_cast<std::size_t>(sequence[i + 1])] = T(1);
  }
  Var<T> picked = g.sum(g.mul(logp, g.constant({n, V}, std::move(target))));
  return g.scale(picked, T(-1) / static_cast<T>(n));
}

/// Hidden state at the final position, [1×d].
template <typename T>
Var<T> summary_vector(Graph<T>& g, const ToyLm<T>& model, std::span<const TokenSlot<T>> tokens) {
  if (tokens.empty()) throw ContractError("summary_vector of an empty sequence");
  auto out = lm_forward(g, model, tokens, Logits::None);
  return g.slice_rows(out.hidden, tokens.size() - 1, 1);
}

template <typename T>
Var<T> summary_vector(Graph<T>& g, const ToyLm<T>& model, std::span<const int> ids) {
  auto slots = id_slots<T>(ids);
  return summary_vector(g, model, std::span<const TokenSlot<T>>(slots));
}

}  // namespace hypogen
