#pragma once

// Sequential EAGLE-style baseline. Each step fuses the previous hidden state
// with the embedding of the last token, runs one MLP block and projects with
// the target's LM head, so drafting gamma tokens costs gamma (net, head) pairs.

#include <cstdint>
#include <span>
#include <utility>

#include "domino/drafter/domino.hpp"

namespace domino {

class ArDrafter {
 public:
  // block_size sets gamma; d_ff and norm_eps are used, the rest is ignored.
  ArDrafter(const TinyTransformer& target, DrafterConfig cfg, std::uint64_t seed);
  ArDrafter(const TinyTransformer& target, DrafterConfig cfg, ParamSet params);

  const DrafterConfig& config() const { return cfg_; }
  const TinyTransformer& target() const { return *target_; }
  const Vocabulary& vocab() const { return target_->vocab(); }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const Tensor& p(const std::string& name) const { return params_.get(name); }
  const Tensor& lm_head() const { return target_->lm_head(); }

 private:
  void check_params() const;

  const TinyTransformer* target_;
  DrafterConfig cfg_;
  ParamSet params_;
};

// One drafter step: (h_prev [d], token) -> (h [d], logits [V]).
std::pair<Tensor, Tensor> ar_step(const ArDrafter& m, const Tensor& h_prev, TokenId token);

// gamma sequential steps starting from the last context feature and the
// anchor. When `forced` is non-empty, forced[i] replaces the picked token i
// (used to probe causal dependence); q rows are still recorded.
DraftBlock ar_rollout(const ArDrafter& m, const ContextFeatures& context, TokenId anchor,
                      int gamma, DraftMode mode, Rng& rng, InvocationCounts* counts = nullptr,
                      std::span<const TokenId> forced = {});

class ArBlockDrafter final : public Drafter {
 public:
  explicit ArBlockDrafter(const ArDrafter& model) : model_(&model) {}
  std::string name() const override { return "eagle-ar"; }
  int gamma() const override { return model_->config().gamma(); }
  DraftBlock draft(const DraftContext& ctx, DraftMode mode, Rng& rng) override;

 private:
  const ArDrafter* model_;
};

}  // namespace domino
