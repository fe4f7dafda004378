#include "domino/numerics/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "domino/numerics/error.hpp"

namespace domino {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'D', 'M', 'C', 'K'};
constexpr std::uint32_t kMaxRank = 2;
constexpr std::uint32_t kMaxNameLen = 4096;

void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw FormatError("checkpoint: truncated stream");
  }
  return v;
}

}  // namespace

void write_checkpoint(std::ostream& os, const ParamSet& params) {
  os.write(kMagic, 4);
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    put_u32(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    const auto& shape = e.tensor.shape();
    put_u32(os, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put_u32(os, static_cast<std::uint32_t>(d));
    std::vector<float> f(e.tensor.data().begin(), e.tensor.data().end());
    os.write(reinterpret_cast<const char*>(f.data()),
             static_cast<std::streamsize>(f.size() * sizeof(float)));
  }
  if (!os) throw FormatError("checkpoint: write failed");
}

ParamSet read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  const auto version = get_u32(is);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = get_u32(is);
  ParamSet out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get_u32(is);
    if (len == 0 || len > kMaxNameLen) throw FormatError("checkpoint: bad name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError("checkpoint: truncated name");
    const auto rank = get_u32(is);
    if (rank > kMaxRank) throw FormatError("checkpoint: rank too large in " + name);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const auto d = get_u32(is);
      if (d == 0) throw FormatError("checkpoint: zero dimension in " + name);
      shape.push_back(d);
    }
    std::vector<float> f(shape_size(shape));
    if (!is.read(reinterpret_cast<char*>(f.data()),
                 static_cast<std::streamsize>(f.size() * sizeof(float)))) {
      throw FormatError("checkpoint: truncated values in " + name);
    }
    out.add(std::move(name), Tensor::param(std::move(shape), {f.begin(), f.end()}));
  }
  return out;
}

void save_checkpoint(const std::string& path, const ParamSet& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("checkpoint: cannot open " + path);
  write_checkpoint(os, params);
}

ParamSet load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open " + path);
  return read_checkpoint(is);
}

std::vector<char> checkpoint_bytes(const ParamSet& params) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, params);
  const auto s = os.str();
  return {s.begin(), s.end()};
}

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t params_hash(const ParamSet& params) {
  const auto bytes = checkpoint_bytes(params);
  return fnv1a64(bytes.data(), bytes.size());
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace domino
