#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "domino/lm/vocab.hpp"

namespace domino {

// Exact order-n conditional table p(next | last n tokens), n in {1, 2}.
// Small enough to enumerate, which makes it the reference target for the
// losslessness oracle.
class TabularTarget {
 public:
  // rows[ctx_index] is a length-V probability row; ctx_index encodes the
  // context tokens base V, oldest first.
  TabularTarget(int order, Vocabulary vocab, std::vector<std::vector<double>> rows);

  static TabularTarget uniform(int order, Vocabulary vocab);
  // p(next = (prev + 1) mod V) = 1 over the ordinary tokens.
  static TabularTarget cycle(Vocabulary vocab);
  // Dirichlet(1)-style random rows; reserved ids get zero mass.
  static TabularTarget random(int order, Vocabulary vocab, std::uint64_t seed);

  int order() const { return order_; }
  const Vocabulary& vocab() const { return vocab_; }
  std::size_t context_count() const { return rows_.size(); }
  const std::vector<double>& row_at(std::size_t ctx_index) const { return rows_[ctx_index]; }

  // Next-token row for the last `order` tokens of prefix.
  std::span<const double> next_dist(std::span<const TokenId> prefix) const;

  void write(std::ostream& os) const;
  static TabularTarget read(std::istream& is);
  void save(const std::string& path) const;
  static TabularTarget load(const std::string& path);

 private:
  int order_;
  Vocabulary vocab_;
  std::vector<std::vector<double>> rows_;
};

std::span<const double> tabular_next_dist(const TabularTarget& model,
                                          std::span<const TokenId> prefix);

}  // namespace domino
