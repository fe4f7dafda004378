#include "domino/lm/vocab.hpp"

#include <cmath>
#include <limits>

#include "domino/numerics/error.hpp"

namespace domino {

void Vocabulary::validate() const {
  if (size < 2) throw ContractError("vocabulary: size must be >= 2");
  if (mask_id && !in_range(*mask_id)) throw ContractError("vocabulary: mask_id out of range");
  if (bos_id && !in_range(*bos_id)) throw ContractError("vocabulary: bos_id out of range");
  if (mask_id && bos_id && *mask_id == *bos_id) {
    throw ContractError("vocabulary: mask_id and bos_id must differ");
  }
  if (ordinary_tokens().empty()) throw ContractError("vocabulary: no ordinary tokens");
}

bool Vocabulary::is_reserved(TokenId t) const {
  return (mask_id && t == *mask_id) || (bos_id && t == *bos_id);
}

TokenId Vocabulary::mask() const {
  if (!mask_id) throw ContractError("vocabulary has no mask id");
  return *mask_id;
}

TokenId Vocabulary::bos() const {
  if (!bos_id) throw ContractError("vocabulary has no bos id");
  return *bos_id;
}

std::vector<TokenId> Vocabulary::ordinary_tokens() const {
  std::vector<TokenId> out;
  for (TokenId t = 0; t < size; ++t) {
    if (!is_reserved(t)) out.push_back(t);
  }
  return out;
}

Vocabulary Vocabulary::plain(std::int32_t size) {
  Vocabulary v;
  v.size = size;
  v.mask_id.reset();
  v.bos_id.reset();
  return v;
}

std::vector<double> next_token_distribution(std::span<const double> logits,
                                            const Vocabulary& vocab) {
  if (logits.size() != static_cast<std::size_t>(vocab.size)) {
    throw ShapeError("next_token_distribution: logits do not match vocabulary");
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (TokenId t = 0; t < vocab.size; ++t) {
    if (!vocab.is_reserved(t)) mx = std::max(mx, logits[t]);
  }
  if (!std::isfinite(mx)) throw NumericError("next_token_distribution: non-finite logits");
  std::vector<double> p(logits.size(), 0.0);
  double s = 0.0;
  for (TokenId t = 0; t < vocab.size; ++t) {
    if (vocab.is_reserved(t)) continue;
    p[t] = std::exp(logits[t] - mx);
    s += p[t];
  }
  for (double& x : p) x /= s;
  return p;
}

TokenId greedy_token(std::span<const double> logits, const Vocabulary& vocab) {
  TokenId best = -1;
  for (TokenId t = 0; t < vocab.size; ++t) {
    if (vocab.is_reserved(t)) continue;
    if (best < 0 || logits[t] > logits[best]) best = t;
  }
  return best;
}

TokenId argmax_token(std::span<const double> probs) {
  TokenId best = 0;
  for (std::size_t t = 1; t < probs.size(); ++t) {
    if (probs[t] > probs[best]) best = static_cast<TokenId>(t);
  }
  return best;
}

TokenId sample_token(std::span<const double> probs, Rng& rng) {
  return static_cast<TokenId>(rng.categorical(probs));
}

}  // namespace domino
