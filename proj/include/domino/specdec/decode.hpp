#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "domino/drafter/drafter.hpp"
#include "domino/lm/transformer.hpp"
#include "domino/specdec/verify.hpp"

namespace domino {

struct SpecMetrics {
  std::string method;
  int gamma = 0;
  int temperature = 0;
  std::int64_t cycles = 0;
  std::int64_t tokens = 0;
  double tau_mean = 0.0;
  std::vector<std::int64_t> tau_hist;  // index = tokens advanced in a cycle, 0..gamma+1
  std::int64_t net_calls = 0;
  std::int64_t head_calls = 0;
  std::uint64_t seed = 0;

  void record_cycle(int advance);
  // Adds the counts of another run (same method and gamma).
  void merge(const SpecMetrics& other);
  std::string to_json() const;
};

struct DecodeOptions {
  int max_new = 64;
  int temperature = 0;  // 0 (greedy) or 1 (sampling)
};

struct CycleTiming {
  double draft_s = 0.0;
  double verify_s = 0.0;
};

struct DecodeResult {
  TokenSeq tokens;  // prompt followed by exactly max_new generated tokens
  SpecMetrics metrics;
  std::vector<CycleTiming> timings;
};

// Draft, verify, append until max_new tokens are generated. The target
// session keeps every verified position except the current anchor, and the
// features of newly accepted positions come from the verification pass.
DecodeResult decode_loop(const TinyTransformer& target, Drafter& drafter,
                         const TokenSeq& prompt, const DecodeOptions& opts, Rng& rng);

// Plain target decoding, one token per step.
TokenSeq autoregressive_decode(const TinyTransformer& target, const TokenSeq& prompt,
                               int max_new, int temperature, Rng& rng);

}  // namespace domino
