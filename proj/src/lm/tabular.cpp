#include "domino/lm/tabular.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "domino/numerics/error.hpp"

namespace domino {

namespace {

std::size_t pow_int(std::size_t b, int e) {
  std::size_t r = 1;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

}  // namespace

TabularTarget::TabularTarget(int order, Vocabulary vocab,
                             std::vector<std::vector<double>> rows)
    : order_(order), vocab_(vocab), rows_(std::move(rows)) {
  if (order_ < 1 || order_ > 2) throw ContractError("tabular: order must be 1 or 2");
  vocab_.validate();
  const auto v = static_cast<std::size_t>(vocab_.size);
  if (rows_.size() != pow_int(v, order_)) throw ShapeError("tabular: wrong row count");
  for (const auto& r : rows_) {
    if (r.size() != v) throw ShapeError("tabular: wrong row width");
    double s = 0.0;
    for (TokenId t = 0; t < vocab_.size; ++t) {
      if (!(r[t] >= 0.0)) throw ContractError("tabular: negative probability");
      if (vocab_.is_reserved(t) && r[t] != 0.0) {
        throw ContractError("tabular: reserved id has nonzero mass");
      }
      s += r[t];
    }
    if (std::abs(s - 1.0) > 1e-12) throw ContractError("tabular: row does not sum to 1");
  }
}

TabularTarget TabularTarget::uniform(int order, Vocabulary vocab) {
  const auto ord = vocab.ordinary_tokens();
  std::vector<double> row(vocab.size, 0.0);
  for (auto t : ord) row[t] = 1.0 / static_cast<double>(ord.size());
  return TabularTarget(order, vocab,
                       std::vector<std::vector<double>>(pow_int(vocab.size, order), row));
}

TabularTarget TabularTarget::cycle(Vocabulary vocab) {
  const auto ord = vocab.ordinary_tokens();
  std::vector<std::vector<double>> rows(vocab.size, std::vector<double>(vocab.size, 0.0));
  for (TokenId c = 0; c < vocab.size; ++c) {
    // Reserved contexts restart the cycle; they are never queried anyway.
    TokenId next = ord.front();
    for (std::size_t i = 0; i < ord.size(); ++i) {
      if (ord[i] == c) next = ord[(i + 1) % ord.size()];
    }
    rows[c][next] = 1.0;
  }
  return TabularTarget(1, vocab, std::move(rows));
}

TabularTarget TabularTarget::random(int order, Vocabulary vocab, std::uint64_t seed) {
  Rng rng(seed);
  const auto n = pow_int(vocab.size, order);
  std::vector<std::vector<double>> rows(n, std::vector<double>(vocab.size, 0.0));
  for (auto& r : rows) {
    double s = 0.0;
    for (TokenId t = 0; t < vocab.size; ++t) {
      if (vocab.is_reserved(t)) continue;
      double u = rng.uniform();
      while (u <= 0.0) u = rng.uniform();
      r[t] = -std::log(u);
      s += r[t];
    }
    for (double& x : r) x /= s;
    // Renormalize once more so the sum is 1 to within rounding of one pass.
    s = 0.0;
    for (double x : r) s += x;
    for (double& x : r) x /= s;
  }
  return TabularTarget(order, vocab, std::move(rows));
}

std::span<const double> TabularTarget::next_dist(std::span<const TokenId> prefix) const {
  if (prefix.size() < static_cast<std::size_t>(order_)) {
    throw ContractError("tabular: prefix shorter than model order");
  }
  std::size_t idx = 0;
  for (std::size_t i = prefix.size() - order_; i < prefix.size(); ++i) {
    const TokenId t = prefix[i];
    if (!vocab_.in_range(t)) throw ContractError("tabular: token out of range");
    if (vocab_.is_reserved(t)) throw ContractError("tabular: context contains a reserved id");
    idx = idx * vocab_.size + static_cast<std::size_t>(t);
  }
  return rows_[idx];
}

std::span<const double> tabular_next_dist(const TabularTarget& model,
                                          std::span<const TokenId> prefix) {
  return model.next_dist(prefix);
}

void TabularTarget::write(std::ostream& os) const {
  os << "tabular order=" << order_ << " vocab=" << vocab_.size;
  if (vocab_.mask_id) os << " mask=" << *vocab_.mask_id;
  if (vocab_.bos_id) os << " bos=" << *vocab_.bos_id;
  os << '\n';
  char buf[32];
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    std::size_t rem = i;
    std::vector<TokenId> ctx(order_);
    for (int k = order_ - 1; k >= 0; --k) {
      ctx[k] = static_cast<TokenId>(rem % vocab_.size);
      rem /= vocab_.size;
    }
    for (auto c : ctx) os << c << ' ';
    for (std::size_t j = 0; j < rows_[i].size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", rows_[i][j]);
      os << buf << (j + 1 < rows_[i].size() ? " " : "\n");
    }
  }
}

TabularTarget TabularTarget::read(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("tabular: empty input");
  std::istringstream hs(line);
  std::string word;
  hs >> word;
  if (word != "tabular") throw FormatError("tabular: bad header");
  int order = 0;
  Vocabulary vocab = Vocabulary::plain(0);
  while (hs >> word) {
    const auto eq = word.find('=');
    if (eq == std::string::npos) throw FormatError("tabular: bad header field " + word);
    const auto key = word.substr(0, eq);
    const int val = std::stoi(word.substr(eq + 1));
    if (key == "order") order = val;
    else if (key == "vocab") vocab.size = val;
    else if (key == "mask") vocab.mask_id = val;
    else if (key == "bos") vocab.bos_id = val;
    else throw FormatError("tabular: unknown header field " + key);
  }
  if (order < 1 || order > 2 || vocab.size < 2) throw FormatError("tabular: bad header values");
  const auto n = pow_int(vocab.size, order);
  std::vector<std::vector<double>> rows(n);
  std::vector<bool> seen(n, false);
  for (std::size_t r = 0; r < n; ++r) {
    if (!std::getline(is, line)) throw FormatError("tabular: missing rows");
    std::istringstream ls(line);
    std::size_t idx = 0;
    for (int k = 0; k < order; ++k) {
      long c;
      if (!(ls >> c) || c < 0 || c >= vocab.size) throw FormatError("tabular: bad context");
      idx = idx * vocab.size + static_cast<std::size_t>(c);
    }
    if (seen[idx]) throw FormatError("tabular: duplicate context row");
    seen[idx] = true;
    rows[idx].resize(vocab.size);
    for (auto& p : rows[idx]) {
      if (!(ls >> p)) throw FormatError("tabular: short probability row");
    }
  }
  return TabularTarget(order, vocab, std::move(rows));
}

void TabularTarget::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw FormatError("tabular: cannot open " + path);
  write(os);
}

TabularTarget TabularTarget::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("tabular: cannot open " + path);
  return read(is);
}

}  // namespace domino
