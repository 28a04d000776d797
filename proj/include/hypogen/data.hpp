#pragma once

// Vocabulary, the procedural hypernym taxonomy, its pretraining corpus, the
// multiple-choice question set built from it, and the JSONL interchange
// format for question sets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "hypogen/errors.hpp"

namespace hypogen {

struct McqExample {
  std::vector<int> question;
  std::vector<std::vector<int>> candidates;
  int gold = 0;

  bool operator==(const McqExample&) const = default;
};

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kSep = 2;
  static constexpr int kEos = 3;

  Vocab() {
    for (const char* s : {"<pad>", "<bos>", "<sep>", "<eos>"}) add(s);
  }

  /// Builds from tokens in id order; the four specials must come first.
  static Vocab from_tokens(const std::vector<std::string>& tokens) {
    Vocab v;
    if (tokens.size() < 4)
      throw SchemaError("vocabulary must start with the four special tokens");
    for (std::size_t i = 0; i < 4; ++i)
      if (tokens[i] != v.tokens_[i])
        throw SchemaError("vocabulary id " + std::to_string(i) + " must be " + v.tokens_[i] +
                          ", found " + tokens[i]);
    for (std::size_t i = 4; i < tokens.size(); ++i) {
      if (v.ids_.count(tokens[i])) throw SchemaError("duplicate vocabulary token " + tokens[i]);
      v.add(tokens[i]);
    }
    return v;
  }

  /// Returns the id of `token`, adding it if new.
  int add(const std::string& token) {
    if (token.empty() || token.find_first_of(" \t\n\r") != std::string::npos)
      throw VocabError("token must be a non-empty word without whitespace: '" + token + "'");
    auto [it, inserted] = ids_.try_emplace(token, static_cast<int>(tokens_.size()));
    if (inserted) tokens_.push_back(token);
    return it->second;
  }

  int id(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    if (it == ids_.end()) throw VocabError("unknown token '" + std::string(token) + "'");
    return it->second;
  }

  bool contains(int id) const { return id >= 0 && static_cast<std::size_t>(id) < tokens_.size(); }

  const std::string& token(int id) const {
    if (!contains(id)) throw VocabError("unknown token id " + std::to_string(id));
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> out;
    std::istringstream is{std::string(text)};
    for (std::string w; is >> w;) out.push_back(id(w));
    return out;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
      if (!out.empty()) out += ' ';
      out += token(id);
    }
    return out;
  }

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

struct Taxonomy {
  std::vector<int> categories;      // token ids
  std::vector<int> hyponyms;        // token ids
  std::vector<int> category_of;     // per hyponym, index into categories
  std::uint64_t seed = 0;
};

struct TaxonomyData {
  Vocab vocab;
  Taxonomy taxonomy;
};

/// Synthetic taxonomy with tokens cat00.. and hyp0000..; hyponyms are
/// assigned to categories round-robin and the assignment is then shuffled,
/// so category sizes differ by at most one.
inline TaxonomyData gen_taxonomy(std::size_t n_categories, std::size_t n_hyponyms,
                                 std::uint64_t seed) {
  if (n_categories < 2) throw ContractError("need at least two categories");
  if (n_hyponyms < n_categories) throw ContractError("need at least one hyponym per category");
  TaxonomyData out;
  Vocab& v = out.vocab;
  for (const char* w : {"what", "is", "a", "?"}) v.add(w);
  auto name = [](const char* prefix, std::size_t i, int width) {
    std::ostringstream os;
    os << prefix << std::setw(width) << std::setfill('0') << i;
    return os.str();
  };
  Taxonomy& t = out.taxonomy;
  t.seed = seed;
  for (std::size_t c = 0; c < n_categories; ++c) t.categories.push_back(v.add(name("cat", c, 2)));
  for (std::size_t h = 0; h < n_hyponyms; ++h) {
    t.hyponyms.push_back(v.add(name("hyp", h, 4)));
    t.category_of.push_back(static_cast<int>(h % n_categories));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(t.category_of.begin(), t.category_of.end(), rng);
  return out;
}

/// "<bos> h is a c <eos>" for every pair, `repeats` times each, shuffled.
inline std::vector<std::vector<int>> gen_pretrain_corpus(const TaxonomyData& data,
                                                         std::size_t repeats) {
  if (repeats < 1) throw ContractError("repeats must be at least 1");
  const auto& t = data.taxonomy;
  const int is = data.vocab.id("is"), a = data.vocab.id("a");
  std::vector<std::vector<int>> corpus;
  corpus.reserve(t.hyponyms.size() * repeats);
  for (std::size_t r = 0; r < repeats; ++r)
    for (std::size_t h = 0; h < t.hyponyms.size(); ++h)
      corpus.push_back({Vocab::kBos, t.hyponyms[h], is, a,
                        t.categories[static_cast<std::size_t>(t.category_of[h])], Vocab::kEos});
  std::mt19937_64 rng(t.seed ^ 0x9e3779b97f4a7c15ULL);
  std::shuffle(corpus.begin(), corpus.end(), rng);
  return corpus;
}

struct McqSplit {
  std::vector<McqExample> train;
  std::vector<McqExample> dev;
};

/// One "what is a h ?" question per hyponym, candidates = every category.
/// The dev split is stratified: hyponyms are shuffled within each category
/// and dealt round-robin across categories, and the first
/// round(n × dev_fraction) dealt go to dev.
inline McqSplit gen_mcqa(const TaxonomyData& data, double dev_fraction, std::uint64_t seed) {
  if (!(dev_fraction > 0.0 && dev_fraction < 1.0))
    throw ContractError("dev_fraction must lie strictly between 0 and 1");
  const auto& t = data.taxonomy;
  const auto& v = data.vocab;
  const std::size_t nc = t.categories.size();
  std::mt19937_64 rng(seed);

  std::vector<std::vector<std::size_t>> by_cat(nc);
  for (std::size_t h = 0; h < t.hyponyms.size(); ++h)
    by_cat[static_cast<std::size_t>(t.category_of[h])].push_back(h);
  for (auto& members : by_cat) std::shuffle(members.begin(), members.end(), rng);

  std::vector<std::size_t> dealt;
  dealt.reserve(t.hyponyms.size());
  std::vector<std::size_t> cat_order(nc);
  for (std::size_t round = 0; dealt.size() < t.hyponyms.size(); ++round) {
    std::iota(cat_order.begin(), cat_order.end(), 0);
    std::shuffle(cat_order.begin(), cat_order.end(), rng);
    for (std::size_t c : cat_order)
      if (round < by_cat[c].size()) dealt.push_back(by_cat[c][round]);
  }

  std::vector<std::vector<int>> candidates;
  for (int c : t.categories) candidates.push_back({c});
  const int what = v.id("what"), is = v.id("is"), a = v.id("a"), qm = v.id("?");
  auto make = [&](std::size_t h) {
    McqExample ex;
    ex.question = {what, is, a, t.hyponyms[h], qm};
    ex.candidates = candidates;
    ex.gold = t.category_of[h];
    return ex;
  };

  const auto n_dev = static_cast<std::size_t>(
      std::llround(static_cast<double>(t.hyponyms.size()) * dev_fraction));
  McqSplit out;
  for (std::size_t i = 0; i < dealt.size(); ++i)
    (i < n_dev ? out.dev : out.train).push_back(make(dealt[i]));
  return out;
}

struct McqDataset {
  Vocab vocab;
  std::vector<McqExample> examples;
};

inline void validate_example(const McqExample& ex, const Vocab& vocab, std::size_t line) {
  auto where = [&] { return " (line " + std::to_string(line) + ")"; };
  auto check_ids = [&](const std::vector<int>& ids) {
    for (int id : ids)
      if (!vocab.contains(id)) throw VocabError("unknown token id " + std::to_string(id) + where());
  };
  check_ids(ex.question);
  if (ex.candidates.size() < 2) throw SchemaError("fewer than two candidates" + where());
  for (const auto& c : ex.candidates) {
    if (c.empty()) throw SchemaError("empty candidate" + where());
    check_ids(c);
  }
  for (std::size_t i = 0; i < ex.candidates.size(); ++i)
    for (std::size_t j = i + 1; j < ex.candidates.size(); ++j)
      if (ex.candidates[i] == ex.candidates[j]) throw SchemaError("duplicate candidates" + where());
  if (ex.gold < 0 || static_cast<std::size_t>(ex.gold) >= ex.candidates.size())
    throw SchemaError("gold index out of range" + where());
}

inline void save_jsonl(const std::vector<McqExample>& examples, const Vocab& vocab,
                       const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os << nlohmann::json{{"vocab", vocab.tokens()}}.dump() << '\n';
  for (const auto& ex : examples) {
    nlohmann::json j;
    j["question"] = ex.question;
    j["candidates"] = ex.candidates;
    j["gold"] = ex.gold;
    os << j.dump() << '\n';
  }
  if (!os) throw IoError("failed writing " + path);
}

inline McqDataset load_jsonl(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  McqDataset out;
  std::string line;
  std::size_t lineno = 0;
  bool have_vocab = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    try {
      if (!have_vocab) {
        if (!j.is_object() || !j.contains("vocab"))
          throw SchemaError("first line must hold the vocab record (line 1)");
        out.vocab = Vocab::from_tokens(j.at("vocab").get<std::vector<std::string>>());
        have_vocab = true;
        continue;
      }
      McqExample ex;
      ex.question = j.at("question").get<std::vector<int>>();
      ex.candidates = j.at("candidates").get<std::vector<std::vector<int>>>();
      ex.gold = j.at("gold").get<int>();
      validate_example(ex, out.vocab, lineno);
      out.examples.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_vocab) throw SchemaError(path + ": missing vocab record");
  return out;
}

/// Corpus text: one sentence of whitespace-separated tokens per line.
inline void save_corpus(const std::vector<std::vector<int>>& corpus, const Vocab& vocab,
                        const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  for (const auto& s : corpus) os << vocab.decode(s) << '\n';
  if (!os) throw IoError("failed writing " + path);
}

inline std::vector<std::vector<int>> load_corpus(const std::string& path, const Vocab& vocab) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  std::vector<std::vector<int>> out;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) out.push_back(vocab.encode(line));
  return out;
}

}  // namespace hypogen
