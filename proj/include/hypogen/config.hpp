#pragma once

// Flat "key = value" run configuration. Blank lines and lines starting with
// '#' are ignored; unknown keys are rejected.

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <istream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "hypogen/errors.hpp"
#include "hypogen/toylm.hpp"
#include "hypogen/train.hpp"

namespace hypogen {

struct RunConfig {
  TrainConfig train;
  PretrainConfig pretrain;
  LmConfig model;  // vocab_size comes from the dataset
  std::size_t corpus_repeats = 4;
  std::string data_dir = "data";
  std::string lm_checkpoint = "lm.ckpt";
  std::string checkpoint = "model.ckpt";

  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  static const std::vector<std::string>& keys();

  /// Fails with ConfigError on inconsistent settings.
  void validate() const {
    train.validate();
    if (pretrain.batch_size == 0) throw ConfigError("pretrain_batch_size must be positive");
    if (corpus_repeats == 0) throw ConfigError("corpus_repeats must be positive");
    if (model.d_model == 0 || model.n_heads == 0 || model.d_model % model.n_heads != 0)
      throw ConfigError("d_model must be a positive multiple of n_heads");
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& k : keys()) j[k] = get(k);
    return j;
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

template <typename N>
N parse_number(std::string_view key, std::string_view text) {
  N v{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end)
    throw ConfigError("invalid value '" + std::string(text) + "' for " + std::string(key));
  return v;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("invalid boolean '" + std::string(text) + "' for " + std::string(key));
}

// Shortest text that parses back to the same value.
template <typename N>
std::string format_number(N v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct ConfigField {
  std::string key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    auto number = [&f](std::string key, auto locate) {
      f.push_back({key,
                   [key, locate](RunConfig& c, std::string_view v) {
                     auto& slot = locate(c);
                     slot = parse_number<std::remove_cvref_t<decltype(slot)>>(key, v);
                   },
                   [locate](const RunConfig& c) {
                     return format_number(locate(c));
                   }});
    };
    auto flag = [&f](std::string key, auto locate) {
      f.push_back({key,
                   [key, locate](RunConfig& c, std::string_view v) { locate(c) = parse_bool(key, v); },
                   [locate](const RunConfig& c) {
                     return std::string(locate(c) ? "true" : "false");
                   }});
    };
    auto text = [&f](std::string key, auto locate) {
      f.push_back({key, [locate](RunConfig& c, std::string_view v) { locate(c) = std::string(v); },
                   [locate](const RunConfig& c) { return locate(c); }});
    };
    f.push_back({"mode", [](RunConfig& c, std::string_view v) { c.train.mode = parse_mode(v); },
                 [](const RunConfig& c) { return std::string(mode_name(c.train.mode)); }});
    number("epochs", [](auto& c) -> auto& { return c.train.epochs; });
    number("warmup_epochs", [](auto& c) -> auto& { return c.train.warmup_epochs; });
    number("learning_rate", [](auto& c) -> auto& { return c.train.learning_rate; });
    number("batch_size", [](auto& c) -> auto& { return c.train.batch_size; });
    number("seed", [](auto& c) -> auto& { return c.train.seed; });
    number("hyp_len", [](auto& c) -> auto& { return c.train.hyp_len; });
    number("top_k", [](auto& c) -> auto& { return c.train.top_k; });
    number("tau", [](auto& c) -> auto& { return c.train.tau; });
    number("lambda_kld", [](auto& c) -> auto& { return c.train.lambda_kld; });
    number("lambda_rep", [](auto& c) -> auto& { return c.train.lambda_rep; });
    flag("gumbel", [](auto& c) -> auto& { return c.train.gumbel; });
    flag("straight_through", [](auto& c) -> auto& { return c.train.straight_through; });
    number("sim_dim", [](auto& c) -> auto& { return c.train.sim_dim; });
    number("sim_init_std", [](auto& c) -> auto& { return c.train.sim_init_std; });
    number("pretrain_epochs", [](auto& c) -> auto& { return c.pretrain.epochs; });
    number("pretrain_learning_rate", [](auto& c) -> auto& { return c.pretrain.learning_rate; });
    number("pretrain_batch_size", [](auto& c) -> auto& { return c.pretrain.batch_size; });
    number("corpus_repeats", [](auto& c) -> auto& { return c.corpus_repeats; });
    number("d_model", [](auto& c) -> auto& { return c.model.d_model; });
    number("n_layers", [](auto& c) -> auto& { return c.model.n_layers; });
    number("n_heads", [](auto& c) -> auto& { return c.model.n_heads; });
    number("max_len", [](auto& c) -> auto& { return c.model.max_len; });
    number("init_std", [](auto& c) -> auto& { return c.model.init_std; });
    text("data_dir", [](auto& c) -> auto& { return c.data_dir; });
    text("lm_checkpoint", [](auto& c) -> auto& { return c.lm_checkpoint; });
    text("checkpoint", [](auto& c) -> auto& { return c.checkpoint; });
    return f;
  }();
  return fields;
}

inline const ConfigField& config_field(std::string_view key) {
  for (const auto& f : config_fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

}  // namespace detail

inline void RunConfig::set(std::string_view key, std::string_view value) {
  detail::config_field(key).set(*this, value);
}

inline std::string RunConfig::get(std::string_view key) const {
  return detail::config_field(key).get(*this);
}

inline const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& f : detail::config_fields()) out.push_back(f.key);
    return out;
  }();
  return k;
}

/// Applies "key = value" lines from `in` on top of `cfg`.
inline void parse_config(std::istream& in, RunConfig& cfg, const std::string& source = "<config>") {
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string_view s = detail::trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(source + ":" + std::to_string(n) + ": expected key = value");
    const std::string_view key = detail::trim(s.substr(0, eq));
    try {
      cfg.set(key, detail::trim(s.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path);
  RunConfig cfg;
  parse_config(in, cfg, path);
  return cfg;
}

/// HYPOGEN_SEED, when set, replaces the configured seed.
inline void apply_env_overrides(RunConfig& cfg) {
  if (const char* s = std::getenv("HYPOGEN_SEED"); s != nullptr && *s != '\0')
    cfg.set("seed", s);
}

}  // namespace hypogen
