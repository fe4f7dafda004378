#include "domino/specdec/losslessness.hpp"

#include <cmath>
#include <map>

#include "domino/numerics/error.hpp"
#include "domino/specdec/verify.hpp"

namespace domino {

std::vector<std::pair<TokenSeq, double>> target_sequence_distribution(
    const TabularTarget& target, const TokenSeq& prompt, int horizon) {
  std::vector<std::pair<TokenSeq, double>> layer{{TokenSeq{}, 1.0}};
  TokenSeq full;
  for (int h = 0; h < horizon; ++h) {
    std::vector<std::pair<TokenSeq, double>> next;
    for (const auto& [seq, pr] : layer) {
      full = prompt;
      full.insert(full.end(), seq.begin(), seq.end());
      const auto p = target.next_dist(full);
      for (std::size_t x = 0; x < p.size(); ++x) {
        if (p[x] <= 0.0) continue;
        TokenSeq s = seq;
        s.push_back(static_cast<TokenId>(x));
        next.emplace_back(std::move(s), pr * p[x]);
      }
    }
    layer = std::move(next);
  }
  return layer;
}

LosslessnessReport enumerate_losslessness(const TabularTarget& target, const TokenSeq& prompt,
                                          const DraftDistFn& drafter, int gamma, int horizon) {
  const int vsize = target.vocab().size;
  if (vsize > kEnumMaxVocab || gamma < 1 || gamma > kEnumMaxGamma || horizon < 1 ||
      horizon > kEnumMaxHorizon) {
    throw ContractError("enumerate_losslessness: caps are V <= " +
                        std::to_string(kEnumMaxVocab) + ", 1 <= gamma <= " +
                        std::to_string(kEnumMaxGamma) + ", 1 <= horizon <= " +
                        std::to_string(kEnumMaxHorizon));
  }
  if (prompt.size() < static_cast<std::size_t>(target.order())) {
    throw ContractError("enumerate_losslessness: prompt shorter than target order");
  }
  const auto v = static_cast<std::size_t>(vsize);

  // State: (emitted tokens, how many of them were accepted drafts in the
  // current cycle). The drafter sees the cycle-start sequence and the drafts.
  using State = std::pair<TokenSeq, int>;
  std::map<State, double> frontier{{{TokenSeq{}, 0}, 1.0}};
  std::map<TokenSeq, double> done;
  LosslessnessReport report;
  TokenSeq full, start;

  while (!frontier.empty()) {
    std::map<State, double> next;
    auto add = [&](TokenSeq seq, int i, double mass) {
      if (mass <= 0.0) return;
      ++report.paths;
      if (seq.size() == static_cast<std::size_t>(horizon)) {
        done[seq] += mass;
      } else {
        next[{std::move(seq), i}] += mass;
      }
    };
    for (const auto& [state, mass] : frontier) {
      const auto& [seq, i] = state;
      full = prompt;
      full.insert(full.end(), seq.begin(), seq.end());
      const auto p = target.next_dist(full);
      auto extended = [&](TokenId x) {
        TokenSeq s = seq;
        s.push_back(x);
        return s;
      };
      if (i == gamma) {
        for (std::size_t y = 0; y < v; ++y) add(extended(static_cast<TokenId>(y)), 0, mass * p[y]);
        continue;
      }
      start.assign(full.begin(), full.end() - i);
      const std::span<const TokenId> drafted(full.data() + start.size(),
                                             static_cast<std::size_t>(i));
      const std::vector<double> q = drafter(start, drafted);
      if (q.size() != v) throw ShapeError("enumerate_losslessness: draft row has wrong size");
      double reject = 0.0;
      for (std::size_t x = 0; x < v; ++x) {
        if (q[x] <= 0.0) continue;
        const double acc = acceptance_probability(p, q, static_cast<TokenId>(x));
        add(extended(static_cast<TokenId>(x)), i + 1, mass * q[x] * acc);
        reject += q[x] * (1.0 - acc);
      }
      if (reject > 0.0) {
        const auto res = residual_distribution(p, q);
        for (std::size_t y = 0; y < v; ++y) {
          add(extended(static_cast<TokenId>(y)), 0, mass * reject * res[y]);
        }
      }
    }
    frontier = std::move(next);
  }

  std::map<TokenSeq, double> exact;
  for (auto& [seq, pr] : target_sequence_distribution(target, prompt, horizon)) exact[seq] = pr;
  double l1 = 0.0;
  for (const auto& [seq, pr] : exact) {
    auto it = done.find(seq);
    l1 += std::abs(pr - (it == done.end() ? 0.0 : it->second));
  }
  for (const auto& [seq, pr] : done) {
    if (!exact.contains(seq)) l1 += pr;
  }
  report.tv = 0.5 * l1;
  report.sequences = done.size();
  return report;
}

}  // namespace domino

namespace domino {

DraftDistFn make_reference_drafter(const std::string& kind, const TabularTarget& target,
                                   std::uint64_t seed) {
  const auto v = static_cast<std::size_t>(target.vocab().size);
  auto target_row = [&target](std::span<const TokenId> start, std::span<const TokenId> drafted) {
    TokenSeq full(start.begin(), start.end());
    full.insert(full.end(), drafted.begin(), drafted.end());
    auto p = target.next_dist(full);
    return std::vector<double>(p.begin(), p.end());
  };
  if (kind == "target") return target_row;
  if (kind == "uniform") {
    return [v](std::span<const TokenId>, std::span<const TokenId>) {
      return std::vector<double>(v, 1.0 / static_cast<double>(v));
    };
  }
  if (kind == "adversarial") {
    return [v, target_row](std::span<const TokenId> start, std::span<const TokenId> drafted) {
      const auto p = target_row(start, drafted);
      std::size_t worst = 0;
      for (std::size_t j = 1; j < v; ++j) {
        if (p[j] < p[worst]) worst = j;
      }
      std::vector<double> q(v, 0.0);
      q[worst] = 1.0;
      return q;
    };
  }
  if (kind == "random") {
    return [v, seed](std::span<const TokenId> start, std::span<const TokenId> drafted) {
      const TokenId last = drafted.empty() ? start.back() : drafted.back();
      Rng rng = Rng(seed).split(static_cast<std::uint64_t>(last) * 16 + drafted.size());
      std::vector<double> q(v);
      double total = 0.0;
      for (double& x : q) {
        x = -std::log(1.0 - rng.uniform());
        total += x;
      }
      for (double& x : q) x /= total;
      return q;
    };
  }
  throw ContractError("unknown reference drafter '" + kind + "'");
}

}  // namespace domino
