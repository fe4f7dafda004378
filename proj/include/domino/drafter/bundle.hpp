#pragma once

// Drafter bundle: parameters plus the config and the hash of the target they
// were trained against.
//
//   magic        4 bytes "DMBN"
//   version      u32
//   target_hash  u64
//   config_len   u32, config text (key=value lines)
//   checkpoint   numerics checkpoint bytes

#include <cstdint>
#include <string>

#include "domino/drafter/domino.hpp"

namespace domino {

inline constexpr std::uint32_t kBundleVersion = 1;

enum class DrafterKind { domino, ar };

struct DrafterBundle {
  DrafterKind kind = DrafterKind::domino;
  DrafterConfig config;
  std::uint64_t target_hash = 0;
  std::string mode;  // training mode label; empty when unknown
  ParamSet params;
};

std::string drafter_config_text(const DrafterConfig& cfg, DrafterKind kind);
void parse_drafter_config(const std::string& text, DrafterConfig* cfg, DrafterKind* kind);

void save_bundle(const std::string& path, const DrafterBundle& bundle);
DrafterBundle load_bundle(const std::string& path);

// Throws ContractError unless the bundle was trained against `target`.
void check_bundle_target(const DrafterBundle& bundle, const TinyTransformer& target);

// FNV-1a over the serialized bundle.
std::uint64_t bundle_hash(const DrafterBundle& bundle);

}  // namespace domino
