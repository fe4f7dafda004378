#include "domino/drafter/drafter.hpp"

#include <algorithm>

#include "domino/numerics/error.hpp"

namespace domino {

void pick_draft_token(DraftBlock& block, std::size_t i, const Vocabulary& vocab, DraftMode mode,
                      Rng& rng) {
  const auto v = block.vocab;
  const auto q = next_token_distribution(block.final_row(i), vocab);
  std::copy(q.begin(), q.end(), block.q.begin() + static_cast<std::ptrdiff_t>(i * v));
  block.tokens[i] = mode == DraftMode::greedy ? greedy_token(block.final_row(i), vocab)
                                              : sample_token(q, rng);
}

OracleDrafter::OracleDrafter(const TinyTransformer& target, int gamma)
    : target_(&target), gamma_(gamma), session_(target) {
  if (gamma < 1) throw ContractError("oracle drafter: gamma must be >= 1");
}

DraftBlock OracleDrafter::draft(const DraftContext& ctx, DraftMode mode, Rng& rng) {
  if (ctx.tokens.empty()) throw ContractError("oracle drafter: empty prefix");
  // Reuse cached positions shared with the new prefix, but always recompute
  // the anchor so its logits are available.
  std::size_t common = 0;
  while (common < cached_.size() && common + 1 < ctx.tokens.size() &&
         cached_[common] == ctx.tokens[common]) {
    ++common;
  }
  session_.truncate(std::min(common, session_.length()));
  auto rows = session_.append(ctx.tokens.subspan(session_.length()));
  const auto v = static_cast<std::size_t>(target_->vocab().size);
  std::vector<double> logits(rows.logits.end() - static_cast<std::ptrdiff_t>(v), rows.logits.end());

  DraftBlock out;
  out.block_size = gamma_ + 1;
  out.anchor = ctx.anchor();
  out.vocab = v;
  out.tokens.resize(gamma_);
  out.base_logits.resize(gamma_ * v);
  out.correction.assign(gamma_ * v, 0.0);
  out.q.assign(gamma_ * v, 0.0);
  for (int i = 0; i < gamma_; ++i) {
    std::copy(logits.begin(), logits.end(), out.base_logits.begin() + i * static_cast<std::ptrdiff_t>(v));
    out.final_logits = out.base_logits;
    pick_draft_token(out, static_cast<std::size_t>(i), target_->vocab(), mode, rng);
    ++counts_.net_calls;
    ++counts_.head_calls;
    if (i + 1 < gamma_) {
      const TokenId t = out.tokens[i];
      auto next = session_.append({&t, 1});
      logits = next.logits;
    }
  }
  out.final_logits = out.base_logits;
  ++counts_.cycles;
  cached_.assign(ctx.tokens.begin(), ctx.tokens.end());
  cached_.insert(cached_.end(), out.tokens.begin(), out.tokens.end() - 1);
  return out;
}

}  // namespace domino
