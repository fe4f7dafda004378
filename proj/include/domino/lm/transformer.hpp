#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "domino/lm/vocab.hpp"
#include "domino/numerics/optim.hpp"

namespace domino {

struct TransformerConfig {
  Vocabulary vocab;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int d_ff = 256;
  int max_context = 256;
  double norm_eps = 1e-6;

  void validate() const;
};

// Per-position target features C_t: the last-layer hidden state after the
// final norm, i.e. exactly the vector the LM head consumes.
struct ContextFeatures {
  std::size_t dim = 0;
  std::vector<double> values;  // length() x dim, row-major

  std::size_t length() const { return dim ? values.size() / dim : 0; }
  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * dim, dim};
  }
  void append_rows(std::span<const double> rows);
};

// Pre-norm decoder-only transformer with learned absolute positions, RMSNorm,
// causal multi-head attention and a SiLU MLP. Weights are frozen: nothing in
// the project trains the target, and drafters share its LM head.
class TinyTransformer {
 public:
  TinyTransformer(TransformerConfig cfg, ParamSet params);

  // Gaussian init scaled by fan-in.
  static TinyTransformer random(const TransformerConfig& cfg, std::uint64_t seed);
  // Every weight zero and every norm gain one.
  static TinyTransformer zeros(const TransformerConfig& cfg);

  const TransformerConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return cfg_.vocab; }
  const ParamSet& params() const { return params_; }
  const Tensor& embed() const { return params_.get("embed"); }
  // [d_model x V]
  const Tensor& lm_head() const { return params_.get("lm_head"); }
  std::uint64_t hash() const { return hash_; }

  void save(const std::string& path) const;
  static TinyTransformer load(const TransformerConfig& cfg, const std::string& path);

 private:
  TransformerConfig cfg_;
  ParamSet params_;
  std::uint64_t hash_ = 0;
};

struct ForwardRows {
  std::size_t count = 0;
  std::vector<double> logits;    // count x V
  std::vector<double> features;  // count x d_model

  std::span<const double> logits_row(std::size_t i, std::size_t v) const {
    return {logits.data() + i * v, v};
  }
};

// Incremental inference with a key/value cache. Each appended token is
// processed by the same per-position code path, so feeding tokens in one call
// or one at a time yields bitwise identical rows.
class TargetSession {
 public:
  explicit TargetSession(const TinyTransformer& model);

  ForwardRows append(std::span<const TokenId> tokens);
  // Drops cached positions >= n.
  void truncate(std::size_t n);
  std::size_t length() const { return len_; }
  const TinyTransformer& model() const { return *model_; }

 private:
  void step(TokenId tok, double* logits_out, double* feature_out);

  const TinyTransformer* model_;
  std::size_t len_ = 0;
  std::vector<std::vector<double>> k_cache_, v_cache_;
  // scratch
  std::vector<double> x_, h_, q_, att_, ff_, scores_;
};

struct TargetOutput {
  ForwardRows rows;
  ContextFeatures features;
};

// Logits and features for every prefix position. The prefix must be
// non-empty and start with bos when the vocabulary has one.
TargetOutput target_forward(const TinyTransformer& model, std::span<const TokenId> prefix);

// Next-token logits at each draft position plus the bonus position
// ((|draft|+1) x V), from one pass over prefix ++ draft.
std::vector<double> verify_logits_for_block(const TinyTransformer& model,
                                            std::span<const TokenId> prefix,
                                            std::span<const TokenId> draft);

}  // namespace domino
