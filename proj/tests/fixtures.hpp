#pragma once

// Tiny taxonomy and LM shared by the training and checkpoint tests.

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "hypogen/train.hpp"

namespace fixtures {

struct Tiny {
  hypogen::TaxonomyData data;
  hypogen::McqSplit split;
  hypogen::ToyLm<float> lm;
};

inline hypogen::LmConfig tiny_lm_config(std::size_t vocab) {
  hypogen::LmConfig c;
  c.vocab_size = vocab;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.max_len = 16;
  return c;
}

inline Tiny tiny(std::uint64_t seed = 0) {
  auto data = hypogen::gen_taxonomy(3, 15, seed);
  auto split = hypogen::gen_mcqa(data, 0.2, seed);
  hypogen::ToyLm<float> lm(tiny_lm_config(data.vocab.size()), seed);
  return {std::move(data), std::move(split), std::move(lm)};
}

inline hypogen::TrainConfig tiny_config(hypogen::Mode mode, std::size_t epochs) {
  hypogen::TrainConfig c;
  c.mode = mode;
  c.epochs = epochs;
  c.warmup_epochs = std::min<std::size_t>(1, epochs);
  c.batch_size = 4;
  c.learning_rate = 1e-2;
  c.sim_dim = 8;
  c.seed = 5;
  return c;
}

/// Every tensor the checkpoint would hold, parameters and optimizer state.
inline std::vector<hypogen::NamedTensor> snapshot(const hypogen::ModelBundle& b) {
  return hypogen::bundle_tensors(b);
}

inline std::vector<std::vector<float>> param_values(const hypogen::ModelBundle& b) {
  std::vector<std::vector<float>> out;
  for (const auto& [n, p] : b.parameters()) out.push_back(p->value);
  return out;
}

class TempDir {
 public:
  TempDir() {
    path_ = std::filesystem::temp_directory_path() /
            ("hypogen_test_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace fixtures
