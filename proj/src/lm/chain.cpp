#include "domino/lm/chain.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "domino/numerics/error.hpp"

namespace domino {

namespace {
// Log-probability written for transitions the chain never makes.
constexpr double kImpossibleLogit = -30.0;
}  // namespace

ChainSpec ChainSpec::cycle(const Vocabulary& vocab) {
  ChainSpec s;
  s.words.push_back(vocab.ordinary_tokens());
  s.start_weights = {1.0};
  return s;
}

ChainSpec ChainSpec::random_words(const Vocabulary& vocab, int count, int length,
                                  std::uint64_t seed) {
  auto pool = vocab.ordinary_tokens();
  if (count <= 0 || length <= 0 ||
      static_cast<std::size_t>(count) * static_cast<std::size_t>(length) > pool.size()) {
    throw ContractError("random_words: not enough ordinary tokens");
  }
  Rng rng(seed);
  for (std::size_t i = pool.size(); i > 1; --i) {
    std::swap(pool[i - 1], pool[rng.uniform_int(i)]);
  }
  ChainSpec s;
  for (int w = 0; w < count; ++w) {
    s.words.emplace_back(pool.begin() + w * length, pool.begin() + (w + 1) * length);
  }
  s.start_weights.assign(count, 1.0 / count);
  return s;
}

void ChainSpec::validate(const Vocabulary& vocab) const {
  if (words.empty() || words.size() != start_weights.size()) {
    throw ContractError("chain: words and start_weights must be non-empty and aligned");
  }
  if (!(continue_prob > 0.0 && continue_prob <= 1.0)) {
    throw ContractError("chain: continue_prob must be in (0, 1]");
  }
  std::set<TokenId> seen;
  double total = 0.0;
  for (std::size_t w = 0; w < words.size(); ++w) {
    if (words[w].empty()) throw ContractError("chain: empty word");
    if (!(start_weights[w] > 0.0)) throw ContractError("chain: start weights must be positive");
    total += start_weights[w];
    for (auto t : words[w]) {
      if (!vocab.in_range(t) || vocab.is_reserved(t)) {
        throw ContractError("chain: word uses a reserved or out-of-range id");
      }
      if (!seen.insert(t).second) throw ContractError("chain: token used twice");
    }
  }
  if (std::abs(total - 1.0) > 1e-9) throw ContractError("chain: start weights must sum to 1");
}

std::vector<std::vector<double>> ChainSpec::transition_rows(const Vocabulary& vocab) const {
  validate(vocab);
  const auto v = static_cast<std::size_t>(vocab.size);
  std::vector<double> restart(v, 0.0);
  for (std::size_t w = 0; w < words.size(); ++w) restart[words[w].front()] += start_weights[w];

  // Tokens outside every word (bos, mask, unused ids) lead to a word start.
  std::vector<std::vector<double>> rows(v, restart);
  for (const auto& word : words) {
    for (std::size_t i = 0; i < word.size(); ++i) {
      auto& r = rows[word[i]];
      if (i + 1 < word.size()) {
        for (auto& x : r) x *= (1.0 - continue_prob);
        r[word[i + 1]] += continue_prob;
      }
    }
  }
  for (auto& r : rows) {
    double s = 0.0;
    for (double x : r) s += x;
    for (double& x : r) x /= s;
  }
  return rows;
}

TinyTransformer make_chain_target(const TransformerConfig& cfg, const ChainSpec& spec,
                                  std::uint64_t seed) {
  if (cfg.d_model < cfg.vocab.size) {
    throw ContractError("make_chain_target: needs d_model >= vocabulary size");
  }
  const auto rows = spec.transition_rows(cfg.vocab);
  TinyTransformer base = TinyTransformer::random(cfg, seed);
  ParamSet ps = base.params().clone();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto v = static_cast<std::size_t>(cfg.vocab.size);

  auto embed = ps.get("embed").mutable_data();
  std::fill(embed.begin(), embed.end(), 0.0);
  for (std::size_t t = 0; t < v; ++t) embed[t * d + t] = 1.0;
  for (auto& e : ps.entries()) {
    const auto& n = e.name;
    if (n == "pos_embed" || n.ends_with(".wo") || n.ends_with(".w_out")) {
      auto data = e.tensor.mutable_data();
      std::fill(data.begin(), data.end(), 0.0);
    }
  }
  // final norm of a one-hot row is sqrt(d) * e_t.
  const double inv = 1.0 / std::sqrt(static_cast<double>(d) / (1.0 + cfg.norm_eps * d));
  auto head = ps.get("lm_head").mutable_data();
  std::fill(head.begin(), head.end(), 0.0);
  for (std::size_t t = 0; t < v; ++t) {
    for (std::size_t u = 0; u < v; ++u) {
      const double lp = rows[t][u] > 0.0 ? std::log(rows[t][u]) : kImpossibleLogit;
      head[t * v + u] = lp * inv;
    }
  }
  ps.round_to_float();
  return TinyTransformer(cfg, std::move(ps));
}

TabularTarget make_chain_tabular(const Vocabulary& vocab, const ChainSpec& spec) {
  auto rows = spec.transition_rows(vocab);
  for (TokenId t = 0; t < vocab.size; ++t) {
    if (!vocab.is_reserved(t)) continue;
    for (auto& r : rows) r[t] = 0.0;
  }
  for (auto& r : rows) {
    double s = 0.0;
    for (double x : r) s += x;
    for (double& x : r) x /= s;
  }
  return TabularTarget(1, vocab, std::move(rows));
}

}  // namespace domino
