#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "domino/numerics/rng.hpp"

namespace domino {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

// Token space shared by a target and its drafters. mask_id fills the future
// positions of a draft block; bos_id starts every sequence. Neither is ever
// emitted: distributions over next tokens give them zero mass.
struct Vocabulary {
  std::int32_t size = 64;
  std::optional<TokenId> mask_id = 63;
  std::optional<TokenId> bos_id = 62;

  // Throws ContractError unless reserved ids are distinct and < size.
  void validate() const;
  bool is_reserved(TokenId t) const;
  bool in_range(TokenId t) const { return t >= 0 && t < size; }
  TokenId mask() const;
  TokenId bos() const;
  // Ids that may be emitted, ascending.
  std::vector<TokenId> ordinary_tokens() const;

  // Vocabulary with no reserved ids (tabular oracle targets).
  static Vocabulary plain(std::int32_t size);
  bool operator==(const Vocabulary&) const = default;
};

// softmax(logits) with reserved ids forced to zero probability.
std::vector<double> next_token_distribution(std::span<const double> logits,
                                            const Vocabulary& vocab);
// Highest-logit ordinary token; ties go to the lowest id.
TokenId greedy_token(std::span<const double> logits, const Vocabulary& vocab);
// Lowest-id argmax of a probability row.
TokenId argmax_token(std::span<const double> probs);
TokenId sample_token(std::span<const double> probs, Rng& rng);

}  // namespace domino
