#pragma once

// Line-delimited token corpus:
//
//   corpus vocab=<V> count=<N>
//   <id> <id> ...        one sequence per line
//
// Sequences sampled from the transformer target start with bos.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "domino/lm/tabular.hpp"
#include "domino/lm/transformer.hpp"

namespace domino {

struct Corpus {
  int vocab_size = 0;
  std::vector<TokenSeq> sequences;

  void write(std::ostream& os) const;
  static Corpus read(std::istream& is);
  void save(const std::string& path) const;
  static Corpus load(const std::string& path);
};

// `count` sequences of `length` tokens (bos included) sampled at temperature 1.
Corpus sample_corpus(const TinyTransformer& target, int count, int length, std::uint64_t seed);

// Same for a tabular target; each sequence starts from a uniformly drawn
// context of `order` ordinary tokens.
Corpus sample_corpus(const TabularTarget& target, int count, int length, std::uint64_t seed);

}  // namespace domino
