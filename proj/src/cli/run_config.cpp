#include "domino/cli/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "domino/numerics/error.hpp"

namespace domino {

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) {
    throw ContractError("config: bad value '" + v + "' for " + key);
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ContractError("config: bad value '" + v + "' for " + key);
  return out;
}

std::string fmt_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// Binds every key to its field for both directions of the round trip.
struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T>
Field int_field(T RunConfig::*m, const char* key) {
  return {[m](const RunConfig& c) { return std::to_string(c.*m); },
          [m, key](RunConfig& c, const std::string& v) { c.*m = parse_number<T>(key, v); }};
}

Field dbl_field(double RunConfig::*m, const char* key) {
  return {[m](const RunConfig& c) { return fmt_double(c.*m); },
          [m, key](RunConfig& c, const std::string& v) { c.*m = parse_double(key, v); }};
}

Field str_field(std::string RunConfig::*m) {
  return {[m](const RunConfig& c) { return c.*m; },
          [m](RunConfig& c, const std::string& v) { c.*m = v; }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> f = {
      {"seed", int_field(&RunConfig::seed, "seed")},
      {"target", str_field(&RunConfig::target)},
      {"target_seed", int_field(&RunConfig::target_seed, "target_seed")},
      {"vocab_size", int_field(&RunConfig::vocab_size, "vocab_size")},
      {"d_model", int_field(&RunConfig::d_model, "d_model")},
      {"n_layers", int_field(&RunConfig::n_layers, "n_layers")},
      {"n_heads", int_field(&RunConfig::n_heads, "n_heads")},
      {"d_ff", int_field(&RunConfig::d_ff, "d_ff")},
      {"max_context", int_field(&RunConfig::max_context, "max_context")},
      {"chain_words", int_field(&RunConfig::chain_words, "chain_words")},
      {"chain_word_length", int_field(&RunConfig::chain_word_length, "chain_word_length")},
      {"block_size", int_field(&RunConfig::block_size, "block_size")},
      {"gamma", int_field(&RunConfig::gamma, "gamma")},
      {"drafter_layers", int_field(&RunConfig::drafter_layers, "drafter_layers")},
      {"drafter_heads", int_field(&RunConfig::drafter_heads, "drafter_heads")},
      {"drafter_d_ff", int_field(&RunConfig::drafter_d_ff, "drafter_d_ff")},
      {"state_dim", int_field(&RunConfig::state_dim, "state_dim")},
      {"rank", int_field(&RunConfig::rank, "rank")},
      {"mode", str_field(&RunConfig::mode)},
      {"steps", int_field(&RunConfig::steps, "steps")},
      {"batch_size", int_field(&RunConfig::batch_size, "batch_size")},
      {"lr", dbl_field(&RunConfig::lr, "lr")},
      {"warmup_ratio", dbl_field(&RunConfig::warmup_ratio, "warmup_ratio")},
      {"clip_norm", dbl_field(&RunConfig::clip_norm, "clip_norm")},
      {"weight_decay", dbl_field(&RunConfig::weight_decay, "weight_decay")},
      {"corpus_size", int_field(&RunConfig::corpus_size, "corpus_size")},
      {"corpus_length", int_field(&RunConfig::corpus_length, "corpus_length")},
      {"temperature", int_field(&RunConfig::temperature, "temperature")},
      {"eval_prompts", int_field(&RunConfig::eval_prompts, "eval_prompts")},
      {"eval_max_new", int_field(&RunConfig::eval_max_new, "eval_max_new")},
      {"eval_seed", int_field(&RunConfig::eval_seed, "eval_seed")},
      {"out", str_field(&RunConfig::out)},
  };
  return f;
}

}  // namespace

void RunConfig::validate() const {
  if (block_size < 2) throw ContractError("config: block_size must be >= 2");
  if (gamma != block_size - 1) {
    throw ContractError("config: gamma must equal block_size - 1 (got gamma=" +
                        std::to_string(gamma) + ", block_size=" + std::to_string(block_size) + ")");
  }
  if (temperature != 0 && temperature != 1) throw ContractError("config: temperature must be 0 or 1");
  if (vocab_size < 4) throw ContractError("config: vocab_size must be >= 4");
  if (corpus_size < 0 || corpus_length < 2) throw ContractError("config: bad corpus size/length");
  if (eval_prompts < 0 || eval_max_new < 0) throw ContractError("config: bad eval sizes");
  parse_mode(mode);
  target_config().validate();
  drafter_config().validate(d_model);
  train_config().validate();
}

std::string RunConfig::to_text() const {
  std::string s;
  for (const auto& [k, f] : fields()) s += k + "=" + f.get(*this) + "\n";
  return s;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& [k, f] : fields()) {
    if (k == key) {
      f.set(*this, value);
      return;
    }
  }
  throw ContractError("config: unknown key '" + key + "'");
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config: expected key=value, got '" + line + "'");
    c.set(line.substr(0, eq), line.substr(eq + 1));
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

void RunConfig::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw FormatError("config: cannot open " + path + " for writing");
  os << to_text();
}

Vocabulary RunConfig::vocab() const {
  Vocabulary v;
  v.size = vocab_size;
  v.mask_id = vocab_size - 1;
  v.bos_id = vocab_size - 2;
  return v;
}

TransformerConfig RunConfig::target_config() const {
  TransformerConfig t;
  t.vocab = vocab();
  t.d_model = d_model;
  t.n_layers = n_layers;
  t.n_heads = n_heads;
  t.d_ff = d_ff;
  t.max_context = max_context;
  return t;
}

DrafterConfig RunConfig::drafter_config() const {
  DrafterConfig d;
  d.block_size = block_size;
  d.n_layers = drafter_layers;
  d.n_heads = drafter_heads;
  d.d_ff = drafter_d_ff;
  d.state_dim = state_dim;
  d.rank = rank;
  return d;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.mode = parse_mode(mode);
  t.steps = steps;
  t.batch_size = batch_size;
  t.lr = lr;
  t.warmup_ratio = warmup_ratio;
  t.clip_norm = clip_norm;
  t.weight_decay = weight_decay;
  t.seed = seed;
  return t;
}

}  // namespace domino
