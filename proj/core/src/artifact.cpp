#include "nfgen/artifact.hpp"

#include <fstream>

namespace nfgen {

namespace fs = std::filesystem;

SidecarPaths sidecar_paths(const fs::path& stem) {
  fs::path header = stem;
  header += ".json";
  fs::path payload = stem;
  payload += ".bin";
  return {header, payload};
}

void write_json_file(const fs::path& path, const json& doc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact(path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void require_schema(const json& doc, const std::string& expected, const std::string& what) {
  auto got = doc.value("schema_hash", std::string{});
  if (got != expected) {
    throw SchemaMismatch(what + ": schema hash " + got + " does not match expected " + expected);
  }
}

namespace {

template <typename T>
void save_impl(const Tensor3<T>& t, const fs::path& stem, const json& extra, const char* kind, const char* dtype) {
  auto paths = sidecar_paths(stem);
  json header = extra;
  header["kind"] = kind;
  header["dims"] = {t.nodes(), t.minutes(), t.features()};
  header["schema_hash"] = t.schema_hash();
  header["start_minute"] = t.start_minute();
  header["epoch_anchor_s"] = t.epoch_anchor_s();
  header["dtype"] = dtype;
  header["layout"] = "node,minute,feature";
  header["payload"] = paths.payload.filename().string();
  write_json_file(paths.header, header);

  std::ofstream out(paths.payload, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + paths.payload.string());
  write_le<T>(out, std::span<const T>(t.data()));
}

template <typename T>
Tensor3<T> load_impl(const fs::path& stem, json* header_out, const char* kind) {
  auto paths = sidecar_paths(stem);
  json header = read_json_file(paths.header);
  if (header.value("kind", std::string{}) != kind) {
    throw ValidationError(paths.header.string() + " is not a " + kind);
  }
  auto dims = header.at("dims");
  Tensor3<T> t(dims.at(0).get<int>(), dims.at(1).get<int>(), dims.at(2).get<int>(),
               header.at("start_minute").get<std::int64_t>(), header.at("schema_hash").get<std::string>());
  std::ifstream in(paths.payload, std::ios::binary);
  if (!in) throw MissingArtifact(paths.payload.string());
  read_le<T>(in, std::span<T>(t.data()));
  if (header_out) *header_out = std::move(header);
  return t;
}

}  // namespace

void save_tensor(const RawTensor& t, const fs::path& stem, const json& extra) {
  save_impl(t, stem, extra, "raw_tensor", "f64le");
}

void save_tensor(const TokenTensor& t, const fs::path& stem, const json& extra) {
  save_impl(t, stem, extra, "token_tensor", "u8");
}

RawTensor load_raw_tensor(const fs::path& stem, json* header) { return load_impl<double>(stem, header, "raw_tensor"); }

TokenTensor load_token_tensor(const fs::path& stem, json* header) {
  return load_impl<std::uint8_t>(stem, header, "token_tensor");
}

}  // namespace nfgen
