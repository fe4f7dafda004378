#pragma once

#include <cstdint>
#include <vector>

#include "domino/lm/tabular.hpp"
#include "domino/lm/transformer.hpp"

namespace domino {

// A first-order "word chain" language: text is a concatenation of words drawn
// from a fixed list. Inside a word the next token is fixed (with probability
// continue_prob; the rest of the mass restarts a word early). After a word
// ends, the next word is drawn from start_weights. The choice of word is the
// only randomness, so every token after a word boundary depends on a token
// sampled earlier in the same draft block. That is the intra-block structure
// a parallel drafter cannot see and a causal correction can.
struct ChainSpec {
  std::vector<TokenSeq> words;
  std::vector<double> start_weights;
  double continue_prob = 1.0;

  // One word covering every ordinary token in ascending order: a cycle.
  static ChainSpec cycle(const Vocabulary& vocab);
  // `count` words of `length` distinct ordinary tokens, shuffled by seed,
  // with uniform start weights.
  static ChainSpec random_words(const Vocabulary& vocab, int count, int length,
                                std::uint64_t seed);

  void validate(const Vocabulary& vocab) const;
  // V x V row-stochastic matrix; row = previous token.
  std::vector<std::vector<double>> transition_rows(const Vocabulary& vocab) const;
};

// Transformer whose next-token distribution is exactly the chain's: one-hot
// embeddings, zero attention/MLP output projections (so the residual stream
// carries the current token unchanged) and an LM head holding the chain's
// log-probabilities. Requires d_model >= V. Other weights are seeded random.
TinyTransformer make_chain_target(const TransformerConfig& cfg, const ChainSpec& spec,
                                  std::uint64_t seed);

TabularTarget make_chain_tabular(const Vocabulary& vocab, const ChainSpec& spec);

}  // namespace domino
