#pragma once

// Flat key=value experiment configuration shared by every CLI verb.

#include <cstdint>
#include <string>

#include "domino/drafter/domino.hpp"
#include "domino/lm/transformer.hpp"
#include "domino/trainer/trainer.hpp"

namespace domino {

struct RunConfig {
  std::uint64_t seed = 0;

  // target
  std::string target = "chain";  // chain | cycle-tabular | <checkpoint path> | <path>.tab
  std::uint64_t target_seed = 1;
  int vocab_size = 64;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int d_ff = 256;
  int max_context = 512;
  int chain_words = 4;
  int chain_word_length = 4;

  // drafter
  int block_size = 8;
  int gamma = 7;  // always block_size - 1
  int drafter_layers = 2;
  int drafter_heads = 2;
  int drafter_d_ff = 128;
  int state_dim = 32;
  int rank = 16;

  // training
  std::string mode = "TF+Curr";
  std::int64_t steps = 300;
  int batch_size = 16;
  double lr = 3e-3;
  double warmup_ratio = 0.04;
  double clip_norm = 1.0;
  double weight_decay = 0.0;
  int corpus_size = 256;
  int corpus_length = 48;

  // evaluation
  int temperature = 1;
  int eval_prompts = 40;
  int eval_max_new = 200;
  std::uint64_t eval_seed = 999;

  std::string out = ".";

  // Throws ContractError on inconsistent values (including gamma != B - 1).
  void validate() const;
  std::string to_text() const;
  // Unknown keys are errors; missing keys keep their defaults.
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);
  void save(const std::string& path) const;
  // Applies one key=value assignment.
  void set(const std::string& key, const std::string& value);

  Vocabulary vocab() const;
  TransformerConfig target_config() const;
  DrafterConfig drafter_config() const;
  TrainConfig train_config() const;

  bool operator==(const RunConfig&) const = default;
};

}  // namespace domino
