#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "nfgen/error.hpp"
#include "nfgen/tensor.hpp"

namespace nfgen {

using json = nlohmann::json;

/// JSON document `<stem>.json` plus raw payload `<stem>.bin`.
struct SidecarPaths {
  std::filesystem::path header;
  std::filesystem::path payload;
};
SidecarPaths sidecar_paths(const std::filesystem::path& stem);

void write_json_file(const std::filesystem::path& path, const json& doc);
json read_json_file(const std::filesystem::path& path);

/// Throws SchemaMismatch when `doc["schema_hash"]` differs from `expected`.
void require_schema(const json& doc, const std::string& expected, const std::string& what);

// Little-endian scalar I/O for binary payloads.
template <typename T>
void write_le(std::ostream& out, std::span<const T> values) {
  static_assert(std::is_arithmetic_v<T>);
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (T v : values) {
      unsigned char bytes[sizeof(T)];
      std::memcpy(bytes, &v, sizeof(T));
      for (std::size_t i = sizeof(T); i-- > 0;) out.put(static_cast<char>(bytes[i]));
    }
  }
}

template <typename T>
void read_le(std::istream& in, std::span<T> values) {
  static_assert(std::is_arithmetic_v<T>);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  if (!in) throw Error("truncated binary payload");
  if constexpr (std::endian::native != std::endian::little && sizeof(T) > 1) {
    for (T& v : values) {
      unsigned char bytes[sizeof(T)];
      std::memcpy(bytes, &v, sizeof(T));
      for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
      std::memcpy(&v, bytes, sizeof(T));
    }
  }
}

/// Persists a raw tensor (f64 payload). `extra` is merged into the header.
void save_tensor(const RawTensor& t, const std::filesystem::path& stem, const json& extra = json::object());
/// Persists a token tensor (u8 payload).
void save_tensor(const TokenTensor& t, const std::filesystem::path& stem, const json& extra = json::object());

RawTensor load_raw_tensor(const std::filesystem::path& stem, json* header = nullptr);
TokenTensor load_token_tensor(const std::filesystem::path& stem, json* header = nullptr);

}  // namespace nfgen
