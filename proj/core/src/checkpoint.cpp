#include "nfgen/checkpoint.hpp"

#include <fstream>

namespace nfgen {

namespace fs = std::filesystem;

void save_checkpoint(const fs::path& stem, const Model& model, const CheckpointMeta& meta) {
  auto paths = sidecar_paths(stem);
  json manifest = json::array();
  for (const auto& n : model.layout().tensors()) {
    manifest.push_back({{"name", n.name}, {"shape", {n.slot.rows, n.slot.cols}}, {"offset", n.slot.offset}});
  }
  json header{{"kind", "checkpoint"},
              {"config", model.config().to_json()},
              {"schema_hash", meta.schema_hash},
              {"config_digest", meta.config_digest},
              {"steps", meta.steps},
              {"metrics", meta.metrics},
              {"vocab", meta.vocab},
              {"extra", meta.extra},
              {"parameter_count", model.parameter_count()},
              {"dtype", "f32le"},
              {"manifest", std::move(manifest)},
              {"payload", paths.payload.filename().string()}};
  write_json_file(paths.header, header);

  std::ofstream out(paths.payload, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + paths.payload.string());
  write_le<float>(out, std::span<const float>(model.params().data(), static_cast<std::size_t>(model.params().size())));
}

Checkpoint load_checkpoint(const fs::path& stem) {
  auto paths = sidecar_paths(stem);
  json header = read_json_file(paths.header);
  if (header.value("kind", std::string{}) != "checkpoint") {
    throw ValidationError(paths.header.string() + " is not a checkpoint");
  }
  Model model(ModelConfig::from_json(header.at("config")));
  const auto& layout = model.layout();
  const auto& manifest = header.at("manifest");
  if (manifest.size() != layout.tensors().size()) throw ValidationError("checkpoint manifest does not match config");
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& want = layout.tensors()[i];
    const auto& got = manifest[i];
    if (got.at("name").get<std::string>() != want.name || got.at("shape").at(0).get<int>() != want.slot.rows ||
        got.at("shape").at(1).get<int>() != want.slot.cols) {
      throw ValidationError("checkpoint tensor " + got.at("name").get<std::string>() + " does not match the layout");
    }
  }
  std::ifstream in(paths.payload, std::ios::binary);
  if (!in) throw MissingArtifact(paths.payload.string());
  read_le<float>(in, std::span<float>(model.params().data(), static_cast<std::size_t>(model.params().size())));

  CheckpointMeta meta;
  meta.schema_hash = header.at("schema_hash").get<std::string>();
  meta.config_digest = header.value("config_digest", std::string{});
  meta.steps = header.value("steps", std::int64_t{0});
  meta.metrics = header.value("metrics", json::object());
  meta.vocab = header.value("vocab", json::object());
  meta.extra = header.value("extra", json::object());
  return {std::move(model), std::move(meta)};
}

}  // namespace nfgen
