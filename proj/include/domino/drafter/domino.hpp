#pragma once

// Parallel block drafter with a causal correction head.
//
// The backbone sees the target's context features and the masked block
// [anchor, MASK, ..., MASK] and produces hidden states for every block
// position in one non-autoregressive pass. Base logits come from the target's
// frozen LM head. The head then walks the block left to right: a GRU folds the
// embeddings of already drafted tokens into a causal state S, and a rank-r
// bottleneck maps [H_i; S_{i-1}] to a residual added to the base logits:
//
//   dL_i = W2 silu(W1 [H_i; S_{i-1}] + b1),   L_i = L_i^base + dL_i
//
// W2 starts at zero, so an untrained head reproduces the backbone exactly.

#include <cstdint>
#include <span>
#include <string>

#include "domino/drafter/drafter.hpp"
#include "domino/lm/transformer.hpp"
#include "domino/numerics/optim.hpp"

namespace domino {

struct DrafterConfig {
  int block_size = 8;  // B; gamma = B - 1
  int n_layers = 2;
  int n_heads = 2;
  int d_ff = 128;
  int state_dim = 32;  // d_s
  int rank = 16;       // r
  double init_std = 0.02;
  double norm_eps = 1e-6;

  int gamma() const { return block_size - 1; }
  void validate(int d_model) const;
};

class DominoDrafter {
 public:
  // Fresh drafter: embeddings copied from the target, W2 zero, the rest
  // small Gaussian.
  DominoDrafter(const TinyTransformer& target, DrafterConfig cfg, std::uint64_t seed);
  // Drafter restored from saved parameters.
  DominoDrafter(const TinyTransformer& target, DrafterConfig cfg, ParamSet params);

  const DrafterConfig& config() const { return cfg_; }
  const TinyTransformer& target() const { return *target_; }
  const Vocabulary& vocab() const { return target_->vocab(); }
  int d_model() const { return target_->config().d_model; }

  // backbone.* and head.* entries. The LM head is not part of this set.
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const Tensor& p(const std::string& name) const { return params_.get(name); }
  const Tensor& lm_head() const { return target_->lm_head(); }

  std::size_t backbone_param_count() const { return params_.scalar_count("backbone."); }
  std::size_t head_param_count() const { return params_.scalar_count("head."); }

 private:
  void check_params() const;

  const TinyTransformer* target_;
  DrafterConfig cfg_;
  ParamSet params_;
};

// [anchor, mask x (B-1)]
TokenSeq build_masked_block(TokenId anchor, int block_size, const Vocabulary& vocab);

// Rows of `features` as a constant [T x d] tensor.
Tensor features_tensor(const ContextFeatures& features);

// Block hidden states H [B x d_model] from one forward pass.
Tensor backbone_forward(const DominoDrafter& m, const Tensor& context,
                        std::span<const TokenId> block);

// H [n x d] -> logits [n x V] with the frozen LM head, one batched product.
Tensor base_logits(const Tensor& hidden, const Tensor& lm_head);

// S' = (1 - z) * S + z * h~ with
//   z  = sigmoid(E Wz + S Uz + bz)
//   r  = sigmoid(E Wr + S Ur + br)
//   h~ = tanh(E Wh + (r * S) Uh + bh)
Tensor gru_step(const DominoDrafter& m, const Tensor& state, const Tensor& embedding);

Tensor zero_state(const DominoDrafter& m);
// Drafter embedding row for a token (shared with the backbone input).
Tensor token_embedding(const DominoDrafter& m, TokenId t);

// dL for one position ([d] and [d_s] inputs) or a batch ([n x d], [n x d_s]).
Tensor correction_logits(const DominoDrafter& m, const Tensor& hidden, const Tensor& prev_state);

// Multiply-accumulate counts per drafted position.
struct HeadFlops {
  std::int64_t correction = 0;  // (d + d_s) r + r V
  std::int64_t full_head = 0;   // d V
};
HeadFlops head_flops(int d_model, int state_dim, int rank, int vocab);

struct RolloutOptions {
  bool use_head = true;
  DraftMode mode = DraftMode::greedy;
};

// One backbone pass and one batched LM-head projection, then the sequential
// head loop over the B-1 future positions.
DraftBlock domino_rollout(const DominoDrafter& m, const ContextFeatures& context,
                          TokenId anchor, const RolloutOptions& opts, Rng& rng,
                          InvocationCounts* counts = nullptr);

// Drafter-interface adapter. use_head=false gives the backbone-only arm.
class DominoBlockDrafter final : public Drafter {
 public:
  DominoBlockDrafter(const DominoDrafter& model, bool use_head)
      : model_(&model), use_head_(use_head) {}
  std::string name() const override { return use_head_ ? "domino" : "backbone-only"; }
  int gamma() const override { return model_->config().gamma(); }
  DraftBlock draft(const DraftContext& ctx, DraftMode mode, Rng& rng) override;

 private:
  const DominoDrafter* model_;
  bool use_head_;
};

}  // namespace domino
