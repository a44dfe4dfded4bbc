#pragma once

// Versioned binary checkpoint container. The byte layout is documented in
// docs/checkpoint.md.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "d2c/mlp.hpp"

namespace d2c {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NetworkRecord {
  std::string name;
  MlpSpec spec;
  ParameterSet params;
  std::optional<OptimizerState> optimizer;
};

struct Checkpoint {
  /// Free-form JSON describing the run (experiment config, step, seed).
  std::string metadata_json;
  std::vector<NetworkRecord> networks;

  const NetworkRecord& network(const std::string& name) const;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws VersionError for a foreign version, InvalidInput for a corrupt file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace d2c
