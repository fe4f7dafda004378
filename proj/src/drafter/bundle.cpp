#include "domino/drafter/bundle.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "domino/numerics/checkpoint.hpp"
#include "domino/numerics/error.hpp"

namespace domino {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'B', 'N'};

template <typename T>
void put(std::ostream& os, T v) {
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  unsigned char b[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw FormatError("bundle: truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b[i]) << (8 * i);
  return v;
}

std::string encode(const DrafterBundle& b) {
  std::ostringstream os(std::ios::binary);
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kBundleVersion);
  put<std::uint64_t>(os, b.target_hash);
  std::string cfg = drafter_config_text(b.config, b.kind);
  if (!b.mode.empty()) cfg += "mode=" + b.mode + "\n";
  put<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  write_checkpoint(os, b.params);
  return os.str();
}

}  // namespace

std::string drafter_config_text(const DrafterConfig& c, DrafterKind kind) {
  std::ostringstream os;
  os.precision(17);
  os << "kind=" << (kind == DrafterKind::domino ? "domino" : "ar") << "\n"
     << "block_size=" << c.block_size << "\n"
     << "n_layers=" << c.n_layers << "\n"
     << "n_heads=" << c.n_heads << "\n"
     << "d_ff=" << c.d_ff << "\n"
     << "state_dim=" << c.state_dim << "\n"
     << "rank=" << c.rank << "\n"
     << "init_std=" << c.init_std << "\n"
     << "norm_eps=" << c.norm_eps << "\n";
  return os.str();
}

void parse_drafter_config(const std::string& text, DrafterConfig* cfg, DrafterKind* kind) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("bundle: bad config line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const char* k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw FormatError(std::string("bundle: missing config key ") + k);
    return it->second;
  };
  const auto& k = need("kind");
  if (k == "domino") {
    *kind = DrafterKind::domino;
  } else if (k == "ar") {
    *kind = DrafterKind::ar;
  } else {
    throw FormatError("bundle: unknown drafter kind " + k);
  }
  cfg->block_size = std::stoi(need("block_size"));
  cfg->n_layers = std::stoi(need("n_layers"));
  cfg->n_heads = std::stoi(need("n_heads"));
  cfg->d_ff = std::stoi(need("d_ff"));
  cfg->state_dim = std::stoi(need("state_dim"));
  cfg->rank = std::stoi(need("rank"));
  cfg->init_std = std::stod(need("init_std"));
  cfg->norm_eps = std::stod(need("norm_eps"));
}

void save_bundle(const std::string& path, const DrafterBundle& bundle) {
  const std::string bytes = encode(bundle);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("bundle: cannot open " + path + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw FormatError("bundle: write failed for " + path);
}

DrafterBundle load_bundle(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("bundle: cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("bundle: bad magic in " + path);
  }
  if (get<std::uint32_t>(is) != kBundleVersion) throw FormatError("bundle: unsupported version");
  DrafterBundle b;
  b.target_hash = get<std::uint64_t>(is);
  const auto n = get<std::uint32_t>(is);
  std::string cfg(n, '\0');
  if (!is.read(cfg.data(), n)) throw FormatError("bundle: truncated config");
  parse_drafter_config(cfg, &b.config, &b.kind);
  if (const auto pos = cfg.find("mode="); pos != std::string::npos) {
    b.mode = cfg.substr(pos + 5, cfg.find('\n', pos) - pos - 5);
  }
  b.params = read_checkpoint(is);
  return b;
}

void check_bundle_target(const DrafterBundle& bundle, const TinyTransformer& target) {
  if (bundle.target_hash != target.hash()) {
    throw ContractError("bundle target hash " + hash_hex(bundle.target_hash) +
                        " does not match target " + hash_hex(target.hash()));
  }
}

std::uint64_t bundle_hash(const DrafterBundle& bundle) {
  const std::string bytes = encode(bundle);
  return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace domino
