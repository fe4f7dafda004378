#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "domino/lm/transformer.hpp"
#include "domino/lm/vocab.hpp"
#include "domino/numerics/rng.hpp"

namespace domino {

// How draft tokens are picked from the drafter's final logits.
enum class DraftMode { greedy, sample };

// Calls into the expensive drafting stages. The cost model charges one
// (net, head) pair per AR step and a single pair per parallel block.
struct InvocationCounts {
  std::int64_t net_calls = 0;
  std::int64_t head_calls = 0;
  std::int64_t cycles = 0;
};

// Result of one drafting cycle. Rows are per future position i = 1..gamma.
// For drafters without a correction branch, correction is all zeros and
// final_logits == base_logits.
struct DraftBlock {
  int block_size = 0;  // gamma + 1
  TokenId anchor = 0;
  std::size_t vocab = 0;
  TokenSeq tokens;                  // gamma drafted tokens
  std::vector<double> base_logits;  // gamma x V
  std::vector<double> correction;   // gamma x V
  std::vector<double> final_logits; // gamma x V
  std::vector<double> q;            // gamma x V, distributions tokens were drawn from

  int gamma() const { return block_size - 1; }
  std::span<const double> q_row(std::size_t i) const { return {q.data() + i * vocab, vocab}; }
  std::span<const double> final_row(std::size_t i) const {
    return {final_logits.data() + i * vocab, vocab};
  }
};

// What a drafter may look at: the verified prefix (ending with the anchor)
// and the target features for every verified position before the anchor.
struct DraftContext {
  std::span<const TokenId> tokens;
  const ContextFeatures* features = nullptr;

  TokenId anchor() const { return tokens.back(); }
};

class Drafter {
 public:
  virtual ~Drafter() = default;
  virtual std::string name() const = 0;
  virtual int gamma() const = 0;
  virtual DraftBlock draft(const DraftContext& ctx, DraftMode mode, Rng& rng) = 0;

  const InvocationCounts& counts() const { return counts_; }
  void reset_counts() { counts_ = {}; }

 protected:
  InvocationCounts counts_;
};

// Drafts with the target itself (greedy or exact sampling): every draft is
// what the target would produce, which pins the acceptance ceiling.
class OracleDrafter final : public Drafter {
 public:
  OracleDrafter(const TinyTransformer& target, int gamma);
  std::string name() const override { return "oracle"; }
  int gamma() const override { return gamma_; }
  DraftBlock draft(const DraftContext& ctx, DraftMode mode, Rng& rng) override;

 private:
  const TinyTransformer* target_;
  int gamma_;
  TargetSession session_;
  TokenSeq cached_;
};

// Fills q rows and picks tokens from final logits (reserved ids excluded).
void pick_draft_token(DraftBlock& block, std::size_t i, const Vocabulary& vocab,
                      DraftMode mode, Rng& rng);

}  // namespace domino
