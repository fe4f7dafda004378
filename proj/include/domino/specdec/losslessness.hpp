#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <span>
#include <vector>

#include "domino/lm/tabular.hpp"

namespace domino {

// Draft distribution for the next draft token given the sequence at the start
// of the cycle and the tokens drafted so far in this cycle.
using DraftDistFn = std::function<std::vector<double>(std::span<const TokenId> cycle_prefix,
                                                      std::span<const TokenId> drafted)>;

struct LosslessnessReport {
  double tv = 0.0;
  std::size_t paths = 0;      // (state, branch) transitions expanded
  std::size_t sequences = 0;  // length-horizon sequences with nonzero mass
};

inline constexpr int kEnumMaxVocab = 8;
inline constexpr int kEnumMaxGamma = 3;
inline constexpr int kEnumMaxHorizon = 4;

// Exact distribution of the first `horizon` tokens emitted by speculative
// sampling after `prompt`, versus the target's own AR distribution.
LosslessnessReport enumerate_losslessness(const TabularTarget& target, const TokenSeq& prompt,
                                          const DraftDistFn& drafter, int gamma, int horizon);

// Exact AR distribution over length-`horizon` continuations, keyed by sequence.
std::vector<std::pair<TokenSeq, double>> target_sequence_distribution(
    const TabularTarget& target, const TokenSeq& prompt, int horizon);

}  // namespace domino

namespace domino {

// Reference drafters for the enumeration grid:
//   "target"      q = the target's own next-token row
//   "uniform"     q uniform over the vocabulary
//   "adversarial" all mass on the target's least likely next token
//   "random"      seeded random row per (last token, draft position)
DraftDistFn make_reference_drafter(const std::string& kind, const TabularTarget& target,
                                   std::uint64_t seed);

}  // namespace domino
