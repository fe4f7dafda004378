#include "domino/specdec/verify.hpp"

#include <algorithm>

#include "domino/numerics/error.hpp"

namespace domino {

VerifyResult verify_greedy(std::span<const TokenId> draft, std::span<const double> logits,
                           const Vocabulary& vocab) {
  const auto v = static_cast<std::size_t>(vocab.size);
  if (logits.size() != (draft.size() + 1) * v) {
    throw ShapeError("verify_greedy: expected " + std::to_string(draft.size() + 1) +
                     " logit rows of " + std::to_string(v));
  }
  VerifyResult r;
  r.flags.assign(draft.size(), false);
  std::size_t i = 0;
  for (; i < draft.size(); ++i) {
    if (greedy_token(logits.subspan(i * v, v), vocab) != draft[i]) break;
    r.flags[i] = true;
  }
  r.accepted = static_cast<int>(i);
  r.bonus = greedy_token(logits.subspan(i * v, v), vocab);
  return r;
}

double acceptance_probability(std::span<const double> p, std::span<const double> q, TokenId x) {
  if (p.size() != q.size()) throw ShapeError("acceptance_probability: p and q differ in size");
  const auto i = static_cast<std::size_t>(x);
  if (x < 0 || i >= q.size()) throw ContractError("acceptance_probability: token out of range");
  if (!(q[i] > 0.0)) {
    throw ContractError("drafted token " + std::to_string(x) + " has zero draft probability");
  }
  return std::min(1.0, p[i] / q[i]);
}

std::vector<double> residual_distribution(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("residual_distribution: p and q differ in size");
  std::vector<double> r(p.size());
  double total = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    r[j] = std::max(0.0, p[j] - q[j]);
    total += r[j];
  }
  if (!(total > 0.0)) return {p.begin(), p.end()};
  for (double& x : r) x /= total;
  return r;
}

VerifyResult verify_stochastic(std::span<const TokenId> draft, std::span<const double> q,
                               std::span<const double> p, std::size_t vocab_size, Rng& rng) {
  const std::size_t g = draft.size();
  const std::size_t v = vocab_size;
  if (q.size() != g * v || p.size() != (g + 1) * v) {
    throw ShapeError("verify_stochastic: q must be gamma x V and p (gamma+1) x V");
  }
  VerifyResult r;
  r.flags.assign(g, false);
  for (std::size_t i = 0; i < g; ++i) {
    const auto pi = p.subspan(i * v, v);
    const auto qi = q.subspan(i * v, v);
    const double acc = acceptance_probability(pi, qi, draft[i]);
    if (acc >= 1.0 || rng.uniform() < acc) {
      r.flags[i] = true;
      continue;
    }
    r.accepted = static_cast<int>(i);
    r.bonus = sample_token(residual_distribution(pi, qi), rng);
    return r;
  }
  r.accepted = static_cast<int>(g);
  r.bonus = sample_token(p.subspan(g * v, v), rng);
  return r;
}

}  // namespace domino
