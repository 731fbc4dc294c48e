#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nfgen {

enum class Direction : std::uint8_t { in = 0, out = 1 };
enum class Measure : std::uint8_t { pkt = 0, byt = 1, flow = 2 };
enum class SelectorKind : std::uint8_t { volume, protocol, port, tcp_flag };

enum class ProtocolClass : std::uint8_t { icmp = 0, tcp = 1, udp = 2, other = 3 };

// Named ports first, then the three IANA ranges.
enum class PortCategory : std::uint8_t {
  p0 = 0,
  p53,
  p80,
  p123,
  p443,
  well_known,
  registered,
  private_range,
};

inline constexpr int kDirections = 2;
inline constexpr int kMeasures = 3;
inline constexpr int kProtocolClasses = 4;
inline constexpr int kPortCategories = 8;
inline constexpr int kTcpFlagValues = 8;

/// Flag bytes tracked as features, in feature order.
inline constexpr std::array<std::uint8_t, kTcpFlagValues> kTrackedTcpFlags = {0, 16, 24, 2, 17, 18, 4, 25};

ProtocolClass protocol_class(std::uint8_t ip_protocol) noexcept;
PortCategory port_category(std::uint16_t port) noexcept;
/// Index into kTrackedTcpFlags, or nullopt when the flag byte is not tracked.
std::optional<int> flag_category(std::uint8_t tcp_flags) noexcept;

std::string_view to_string(Direction d) noexcept;
std::string_view to_string(Measure m) noexcept;
std::string_view to_string(ProtocolClass p) noexcept;
std::string_view to_string(PortCategory p) noexcept;

struct FeatureDescriptor {
  Direction direction;
  Measure measure;
  SelectorKind kind;
  /// ProtocolClass, PortCategory or tracked-flag index, depending on `kind`.
  std::uint8_t value = 0;

  std::string name() const;
};

enum class SchemaVariant { full, light };

std::string_view to_string(SchemaVariant v) noexcept;
SchemaVariant parse_schema_variant(std::string_view text);

/// Ordered list of traffic features.
///
/// The full layout is 86 features, grouped by selector and then ordered
/// direction-major, measure-minor within each group:
///   [0, 6)    volume       (in|out) x (pkt|byt|flow)
///   [6, 30)   protocol     ICMP, TCP, UDP, other; each (in|out) x (pkt|byt|flow)
///   [30, 78)  port         0, 53, 80, 123, 443, well-known, registered, private
///   [78, 86)  TCP flag     0, 16, 24, 2, 17, 18, 4, 25; out-direction flow counts
/// The light layout is the first six (volume) entries only.
class FeatureSchema {
 public:
  static FeatureSchema full();
  static FeatureSchema light();
  static FeatureSchema make(SchemaVariant v);

  SchemaVariant variant() const noexcept { return variant_; }
  int size() const noexcept { return static_cast<int>(features_.size()); }
  const FeatureDescriptor& operator[](int i) const { return features_[static_cast<std::size_t>(i)]; }
  const std::vector<FeatureDescriptor>& features() const noexcept { return features_; }

  /// 16 hex digits of FNV-1a over the ordered feature names.
  const std::string& hash() const noexcept { return hash_; }

  // Feature indices, or -1 when the schema does not carry that feature.
  int volume_index(Direction d, Measure m) const noexcept;
  int protocol_index(ProtocolClass p, Direction d, Measure m) const noexcept;
  int port_index(PortCategory c, Direction d, Measure m) const noexcept;
  int flag_index(int flag_slot) const noexcept;

  /// Index of a feature by name, or -1.
  int find(std::string_view name) const;

 private:
  explicit FeatureSchema(SchemaVariant v);

  SchemaVariant variant_;
  std::vector<FeatureDescriptor> features_;
  std::string hash_;
  std::array<int, kDirections * kMeasures> volume_{};
  std::array<int, kProtocolClasses * kDirections * kMeasures> protocol_{};
  std::array<int, kPortCategories * kDirections * kMeasures> port_{};
  std::array<int, kTcpFlagValues> flag_{};
};

/// 64-bit FNV-1a, used for schema hashes and config digests.
std::uint64_t fnv1a(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept;
std::string hex64(std::uint64_t v);

}  // namespace nfgen
