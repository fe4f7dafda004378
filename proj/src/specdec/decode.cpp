#include "domino/specdec/decode.hpp"

#include <chrono>

#include "json.hpp"

#include "domino/numerics/error.hpp"

namespace domino {

namespace {
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}
}  // namespace

void SpecMetrics::record_cycle(int advance) {
  if (advance < 1 || advance > gamma + 1) {
    throw ContractError("cycle advanced " + std::to_string(advance) + " tokens with gamma " +
                        std::to_string(gamma));
  }
  if (tau_hist.size() != static_cast<std::size_t>(gamma + 2)) tau_hist.assign(gamma + 2, 0);
  ++tau_hist[advance];
  ++cycles;
  tokens += advance;
  tau_mean = static_cast<double>(tokens) / static_cast<double>(cycles);
}

void SpecMetrics::merge(const SpecMetrics& o) {
  if (o.gamma != gamma) throw ContractError("SpecMetrics::merge: gamma differs");
  if (tau_hist.size() != static_cast<std::size_t>(gamma + 2)) tau_hist.assign(gamma + 2, 0);
  for (std::size_t i = 0; i < o.tau_hist.size() && i < tau_hist.size(); ++i) {
    tau_hist[i] += o.tau_hist[i];
  }
  cycles += o.cycles;
  tokens += o.tokens;
  net_calls += o.net_calls;
  head_calls += o.head_calls;
  tau_mean = cycles ? static_cast<double>(tokens) / static_cast<double>(cycles) : 0.0;
}

std::string SpecMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["method"] = method;
  j["gamma"] = gamma;
  j["temperature"] = temperature;
  j["cycles"] = cycles;
  j["tokens"] = tokens;
  j["tau_mean"] = tau_mean;
  j["tau_hist"] = tau_hist;
  j["net_calls"] = net_calls;
  j["head_calls"] = head_calls;
  j["seed"] = seed;
  return j.dump();
}

DecodeResult decode_loop(const TinyTransformer& target, Drafter& drafter,
                         const TokenSeq& prompt, const DecodeOptions& opts, Rng& rng) {
  if (opts.temperature != 0 && opts.temperature != 1) {
    throw ContractError("temperature must be 0 or 1");
  }
  if (prompt.size() < 2) throw ContractError("decode_loop: prompt needs at least 2 tokens");
  if (opts.max_new < 0) throw ContractError("decode_loop: max_new must be >= 0");
  const int gamma = drafter.gamma();
  const auto& vocab = target.vocab();
  const auto v = static_cast<std::size_t>(vocab.size);
  const std::size_t need = prompt.size() + static_cast<std::size_t>(opts.max_new) + gamma + 1;
  if (need > static_cast<std::size_t>(target.config().max_context)) {
    throw ContractError("decode_loop: prompt + max_new + block exceeds max_context " +
                        std::to_string(target.config().max_context));
  }

  DecodeResult out;
  out.tokens = prompt;
  out.metrics.method = drafter.name();
  out.metrics.gamma = gamma;
  out.metrics.temperature = opts.temperature;
  out.metrics.seed = rng.seed();
  out.metrics.tau_hist.assign(gamma + 2, 0);
  const InvocationCounts before = drafter.counts();

  TargetSession session(target);
  ContextFeatures ctx;
  ctx.dim = static_cast<std::size_t>(target.config().d_model);
  {
    auto rows = session.append(std::span(prompt).first(prompt.size() - 1));
    ctx.append_rows(rows.features);
  }
  const DraftMode mode = opts.temperature == 0 ? DraftMode::greedy : DraftMode::sample;
  const std::size_t goal = prompt.size() + static_cast<std::size_t>(opts.max_new);

  TokenSeq block;
  while (out.tokens.size() < goal) {
    auto t0 = Clock::now();
    const DraftBlock draft = drafter.draft({out.tokens, &ctx}, mode, rng);
    CycleTiming timing;
    timing.draft_s = seconds_since(t0);
    if (draft.tokens.size() != static_cast<std::size_t>(gamma)) {
      throw ContractError("drafter returned a block of the wrong length");
    }

    t0 = Clock::now();
    block.assign(1, out.tokens.back());
    block.insert(block.end(), draft.tokens.begin(), draft.tokens.end());
    for (TokenId t : draft.tokens) {
      if (vocab.is_reserved(t)) throw ContractError("drafter emitted a reserved id");
    }
    const std::size_t base = session.length();
    const ForwardRows rows = session.append(block);
    VerifyResult vr;
    if (opts.temperature == 0) {
      vr = verify_greedy(draft.tokens, rows.logits, vocab);
    } else {
      std::vector<double> p;
      p.reserve(rows.count * v);
      for (std::size_t i = 0; i < rows.count; ++i) {
        auto d = next_token_distribution(rows.logits_row(i, v), vocab);
        p.insert(p.end(), d.begin(), d.end());
      }
      vr = verify_stochastic(draft.tokens, draft.q, p, v, rng);
    }
    const auto a = static_cast<std::size_t>(vr.accepted);
    // Anchor plus accepted drafts become verified context.
    ctx.append_rows(std::span(rows.features).first((a + 1) * ctx.dim));
    session.truncate(base + a + 1);
    out.tokens.insert(out.tokens.end(), draft.tokens.begin(), draft.tokens.begin() + a);
    out.tokens.push_back(vr.bonus);
    timing.verify_s = seconds_since(t0);
    out.timings.push_back(timing);
    out.metrics.record_cycle(vr.advance());
  }
  out.tokens.resize(goal);
  out.metrics.net_calls = drafter.counts().net_calls - before.net_calls;
  out.metrics.head_calls = drafter.counts().head_calls - before.head_calls;
  return out;
}

TokenSeq autoregressive_decode(const TinyTransformer& target, const TokenSeq& prompt,
                               int max_new, int temperature, Rng& rng) {
  if (temperature != 0 && temperature != 1) throw ContractError("temperature must be 0 or 1");
  if (prompt.empty()) throw ContractError("autoregressive_decode: empty prompt");
  const auto& vocab = target.vocab();
  const auto v = static_cast<std::size_t>(vocab.size);
  TargetSession session(target);
  TokenSeq out = prompt;
  auto rows = session.append(prompt);
  std::vector<double> last(rows.logits.end() - static_cast<std::ptrdiff_t>(v), rows.logits.end());
  for (int n = 0; n < max_new; ++n) {
    const TokenId t = temperature == 0 ? greedy_token(last, vocab)
                                       : sample_token(next_token_distribution(last, vocab), rng);
    out.push_back(t);
    if (n + 1 == max_new) break;
    last = session.append({&t, 1}).logits;
  }
  return out;
}

}  // namespace domino
