#pragma once

#include <filesystem>
#include <string>

#include "nfgen/artifact.hpp"
#include "nfgen/model.hpp"

namespace nfgen {

struct CheckpointMeta {
  std::string schema_hash;
  std::string config_digest;
  std::int64_t steps = 0;
  json metrics = json::object();
  /// Node IPs and customer names in embedding-row order.
  json vocab = json::object();
  json extra = json::object();
};

struct Checkpoint {
  Model model;
  CheckpointMeta meta;
};

/// Header `<stem>.json` (config, metadata, tensor manifest) plus
/// `<stem>.bin` holding every named tensor as little-endian float32.
void save_checkpoint(const std::filesystem::path& stem, const Model& model, const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::filesystem::path& stem);

}  // namespace nfgen
