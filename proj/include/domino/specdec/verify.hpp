#pragma once

#include <span>
#include <vector>

#include "domino/lm/vocab.hpp"
#include "domino/numerics/rng.hpp"

namespace domino {

struct VerifyResult {
  int accepted = 0;         // a in [0, gamma]
  TokenId bonus = 0;        // replacement after a rejection, or the bonus token
  std::vector<bool> flags;  // per draft position; always a prefix of trues

  int advance() const { return accepted + 1; }
  TokenId next_anchor() const { return bonus; }
};

// Greedy rule: accept while draft_i == argmax(row_i), then emit argmax(row_a).
// logits holds gamma+1 rows of V.
VerifyResult verify_greedy(std::span<const TokenId> draft, std::span<const double> logits,
                           const Vocabulary& vocab);

// min(1, p(x) / q(x)). Throws ContractError when q(x) == 0.
double acceptance_probability(std::span<const double> p, std::span<const double> q, TokenId x);

// normalize(max(0, p - q)). When p == q there is no residual mass and p is
// returned (the branch that uses it then has probability zero).
std::vector<double> residual_distribution(std::span<const double> p, std::span<const double> q);

// Lossless stochastic rule. q: gamma x V draft distributions, p: (gamma+1) x V
// target distributions.
VerifyResult verify_stochastic(std::span<const TokenId> draft, std::span<const double> q,
                               std::span<const double> p, std::size_t vocab_size, Rng& rng);

}  // namespace domino
