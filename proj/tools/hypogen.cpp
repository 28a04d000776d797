// Command-line driver: gen-data, pretrain, train, eval, ablate, inspect.
//
// stdout carries JSON records only (one per line, the effective config
// first); progress and errors go to stderr.
//
// Exit codes: 0 success, 1 usage or config error, 2 I/O or format error,
// 3 numeric failure.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hypogen/config.hpp"
#include "hypogen/data.hpp"
#include "hypogen/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hypogen;

namespace {

void emit(const json& record) { std::cout << record.dump() << '\n' << std::flush; }

struct Paths {
  std::string train, dev, corpus;
  explicit Paths(const std::string& dir)
      : train((fs::path(dir) / "train.jsonl").string()),
        dev((fs::path(dir) / "dev.jsonl").string()),
        corpus((fs::path(dir) / "corpus.txt").string()) {}
};

// Precedence: defaults < config file < HYPOGEN_SEED < --set overrides.
struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", file, "key = value config file");
    cmd->add_option("-s,--set", overrides, "override a config key (key=value)");
  }

  RunConfig resolve() const {
    RunConfig cfg = file.empty() ? RunConfig{} : load_config(file);
    apply_env_overrides(cfg);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    emit({{"config", cfg.to_json()}});
    return cfg;
  }
};

void cmd_gen_data(std::size_t categories, std::size_t hyponyms, std::uint64_t seed,
                  double dev_fraction, std::size_t repeats, const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out + ": " + ec.message());
  const TaxonomyData data = gen_taxonomy(categories, hyponyms, seed);
  const McqSplit split = gen_mcqa(data, dev_fraction, seed);
  const auto corpus = gen_pretrain_corpus(data, repeats);
  const Paths p(out);
  save_jsonl(split.train, data.vocab, p.train);
  save_jsonl(split.dev, data.vocab, p.dev);
  save_corpus(corpus, data.vocab, p.corpus);
  emit({{"train", split.train.size()},
        {"dev", split.dev.size()},
        {"corpus", corpus.size()},
        {"vocab", data.vocab.size()},
        {"out", out}});
}

void cmd_pretrain(const RunConfig& cfg) {
  const Paths p(cfg.data_dir);
  const McqDataset train_set = load_jsonl(p.train);
  const auto corpus = load_corpus(p.corpus, train_set.vocab);
  LmConfig lc = cfg.model;
  lc.vocab_size = train_set.vocab.size();
  ToyLm<float> lm(lc, cfg.train.seed);
  PretrainConfig pc = cfg.pretrain;
  pc.seed = cfg.train.seed;
  pretrain(lm, corpus, pc, [](std::size_t epoch, double loss) {
    emit({{"epoch", epoch}, {"pretrain_loss", loss}});
  });
  save_lm(cfg.lm_checkpoint, lm);
  emit({{"hypernym_probe", hypernym_probe(lm, corpus)}, {"lm_checkpoint", cfg.lm_checkpoint}});
}

void cmd_train(const RunConfig& cfg, const std::string& resume) {
  const Paths p(cfg.data_dir);
  const McqDataset train_set = load_jsonl(p.train);
  const McqDataset dev_set = load_jsonl(p.dev);
  if (dev_set.vocab.tokens() != train_set.vocab.tokens())
    throw SchemaError("train and dev files carry different vocabularies");
  ModelBundle bundle = resume.empty() ? make_bundle(load_lm(cfg.lm_checkpoint), cfg.train)
                                      : load_checkpoint(resume);
  if (bundle.lm.vocab_size != train_set.vocab.size())
    throw SchemaError("model vocabulary size does not match the dataset");
  train(bundle, train_set.examples, dev_set.examples, cfg.train, [](const Metrics& m) {
    emit(m.to_json());
    std::cerr << "epoch " << m.epoch << " dev accuracy " << m.accuracy << '\n';
  });
  save_checkpoint(bundle, cfg.checkpoint);
  emit({{"checkpoint", cfg.checkpoint}, {"epochs_done", bundle.epochs_done}});
}

McqDataset load_split(const RunConfig& cfg, const std::string& split) {
  if (split != "train" && split != "dev") throw ConfigError("--split must be train or dev");
  const Paths p(cfg.data_dir);
  return load_jsonl(split == "train" ? p.train : p.dev);
}

void cmd_eval(const RunConfig& cfg, const std::string& split) {
  const McqDataset data = load_split(cfg, split);
  const ModelBundle bundle = load_checkpoint(cfg.checkpoint);
  json j = evaluate(bundle, data.examples).to_json();
  j["split"] = split;
  j["mode"] = mode_name(bundle.mode);
  emit(j);
}

void cmd_ablate(const RunConfig& cfg, const std::string& split) {
  const McqDataset data = load_split(cfg, split);
  const ModelBundle bundle = load_checkpoint(cfg.checkpoint);
  const AblationResult r = ablate_zero_hypothesis(bundle, data.examples);
  emit({{"split", split},
        {"with_hypothesis", r.with_hypothesis.accuracy},
        {"without_hypothesis", r.without_hypothesis.accuracy},
        {"delta_pct", r.delta_pct}});
}

void cmd_inspect(const RunConfig& cfg, const std::string& split, std::size_t limit) {
  const McqDataset data = load_split(cfg, split);
  const ModelBundle bundle = load_checkpoint(cfg.checkpoint);
  if (!uses_generator(bundle.mode))
    throw ContractError(std::string("inspect needs a model with a generator; checkpoint mode is ") +
                        mode_name(bundle.mode));
  const std::size_t n = std::min(limit, data.examples.size());
  const auto subset = std::span<const McqExample>(data.examples).subspan(0, n);
  const EvalResult result = evaluate_detailed(bundle, subset);
  const Vocab& v = data.vocab;
  for (std::size_t i = 0; i < n; ++i) {
    const McqExample& ex = subset[i];
    const EvalRecord& r = result.records[i];
    emit({{"question", v.decode(ex.question)},
          {"hypothesis", v.decode(r.hypothesis)},
          {"gold", v.decode(ex.candidates[static_cast<std::size_t>(ex.gold)])},
          {"predicted", v.decode(ex.candidates[static_cast<std::size_t>(r.predicted)])},
          {"correct", r.predicted == ex.gold}});
  }
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return 3;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const ParseError*>(&e) || dynamic_cast<const SchemaError*>(&e) ||
      dynamic_cast<const VocabError*>(&e))
    return 2;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised hypothesis generation for multiple-choice QA"};
  app.require_subcommand(1);

  std::size_t categories = 6, hyponyms = 600, repeats = 4;
  std::uint64_t data_seed = 0;
  double dev_fraction = 0.2;
  std::string out = "data";
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic taxonomy task and corpus");
  gen->add_option("--categories", categories, "number of categories")->capture_default_str();
  gen->add_option("--hyponyms", hyponyms, "number of hyponyms")->capture_default_str();
  gen->add_option("--seed", data_seed, "generation seed")->capture_default_str();
  gen->add_option("--dev-fraction", dev_fraction, "held-out fraction")->capture_default_str();
  gen->add_option("--repeats", repeats, "corpus repeats per pair")->capture_default_str();
  gen->add_option("--out", out, "output directory")->capture_default_str();

  ConfigArgs pre_cfg, train_cfg, eval_cfg, ablate_cfg, inspect_cfg;
  auto* pre = app.add_subcommand("pretrain", "pretrain the language model on the corpus");
  pre_cfg.attach(pre);

  std::string resume;
  auto* tr = app.add_subcommand("train", "train a model bundle");
  train_cfg.attach(tr);
  tr->add_option("--resume", resume, "continue from a checkpoint");

  std::string split = "dev";
  std::size_t limit = 10;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cfg.attach(ev);
  ev->add_option("--split", split, "train or dev")->capture_default_str();
  auto* ab = app.add_subcommand("ablate", "zero-hypothesis ablation");
  ablate_cfg.attach(ab);
  ab->add_option("--split", split, "train or dev")->capture_default_str();
  auto* in = app.add_subcommand("inspect", "dump generated hypotheses");
  inspect_cfg.attach(in);
  in->add_option("--split", split, "train or dev")->capture_default_str();
  in->add_option("--limit", limit, "number of examples")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*gen) cmd_gen_data(categories, hyponyms, data_seed, dev_fraction, repeats, out);
    if (*pre) cmd_pretrain(pre_cfg.resolve());
    if (*tr) cmd_train(train_cfg.resolve(), resume);
    if (*ev) cmd_eval(eval_cfg.resolve(), split);
    if (*ab) cmd_ablate(ablate_cfg.resolve(), split);
    if (*in) cmd_inspect(inspect_cfg.resolve(), split, limit);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  }
  return 0;
}
