#include "domino/trainer/corpus.hpp"

#include <fstream>
#include <sstream>

#include "domino/numerics/error.hpp"

namespace domino {

void Corpus::write(std::ostream& os) const {
  os << "corpus vocab=" << vocab_size << " count=" << sequences.size() << "\n";
  for (const auto& s : sequences) {
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? " " : "") << s[i];
    os << "\n";
  }
}

Corpus Corpus::read(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("corpus: missing header");
  Corpus c;
  std::size_t count = 0;
  if (std::sscanf(line.c_str(), "corpus vocab=%d count=%zu", &c.vocab_size, &count) != 2) {
    throw FormatError("corpus: bad header '" + line + "'");
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    TokenSeq s;
    long long t;
    while (ls >> t) {
      if (t < 0 || t >= c.vocab_size) throw FormatError("corpus: token out of range");
      s.push_back(static_cast<TokenId>(t));
    }
    if (!ls.eof()) throw FormatError("corpus: bad token line");
    c.sequences.push_back(std::move(s));
  }
  if (c.sequences.size() != count) throw FormatError("corpus: count does not match header");
  return c;
}

void Corpus::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw FormatError("corpus: cannot open " + path + " for writing");
  write(os);
}

Corpus Corpus::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("corpus: cannot open " + path);
  return read(is);
}

Corpus sample_corpus(const TinyTransformer& target, int count, int length, std::uint64_t seed) {
  if (count < 0 || length < 2) throw ContractError("sample_corpus: need count >= 0, length >= 2");
  if (length > target.config().max_context) {
    throw ContractError("sample_corpus: length exceeds max_context");
  }
  const auto& vocab = target.vocab();
  if (!vocab.bos_id) throw ContractError("sample_corpus: target vocabulary has no bos");
  const auto v = static_cast<std::size_t>(vocab.size);
  Corpus c;
  c.vocab_size = vocab.size;
  Rng root(seed);
  for (int n = 0; n < count; ++n) {
    Rng rng = root.split(static_cast<std::uint64_t>(n));
    TargetSession session(target);
    TokenSeq s{vocab.bos()};
    auto rows = session.append(s);
    std::vector<double> last(rows.logits.end() - static_cast<std::ptrdiff_t>(v),
                             rows.logits.end());
    while (static_cast<int>(s.size()) < length) {
      const TokenId t = sample_token(next_token_distribution(last, vocab), rng);
      s.push_back(t);
      if (static_cast<int>(s.size()) < length) last = session.append({&t, 1}).logits;
    }
    c.sequences.push_back(std::move(s));
  }
  return c;
}

Corpus sample_corpus(const TabularTarget& target, int count, int length, std::uint64_t seed) {
  if (count < 0 || length < target.order()) {
    throw ContractError("sample_corpus: need count >= 0 and length >= order");
  }
  const auto ordinary = target.vocab().ordinary_tokens();
  Corpus c;
  c.vocab_size = target.vocab().size;
  Rng root(seed);
  for (int n = 0; n < count; ++n) {
    Rng rng = root.split(static_cast<std::uint64_t>(n));
    TokenSeq s;
    for (int i = 0; i < target.order(); ++i) s.push_back(ordinary[rng.uniform_int(ordinary.size())]);
    while (static_cast<int>(s.size()) < length) s.push_back(sample_token(target.next_dist(s), rng));
    c.sequences.push_back(std::move(s));
  }
  return c;
}

}  // namespace domino
