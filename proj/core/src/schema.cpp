#include "nfgen/schema.hpp"

#include <cstdio>

#include "nfgen/error.hpp"
#include "nfgen/flow.hpp"

namespace nfgen {

ProtocolClass protocol_class(std::uint8_t ip_protocol) noexcept {
  switch (ip_protocol) {
    case ip_proto::kIcmp: return ProtocolClass::icmp;
    case ip_proto::kTcp: return ProtocolClass::tcp;
    case ip_proto::kUdp: return ProtocolClass::udp;
    default: return ProtocolClass::other;
  }
}

PortCategory port_category(std::uint16_t port) noexcept {
  switch (port) {
    case 0: return PortCategory::p0;
    case 53: return PortCategory::p53;
    case 80: return PortCategory::p80;
    case 123: return PortCategory::p123;
    case 443: return PortCategory::p443;
    default: break;
  }
  if (port <= 1023) return PortCategory::well_known;
  if (port <= 49151) return PortCategory::registered;
  return PortCategory::private_range;
}

std::optional<int> flag_category(std::uint8_t tcp_flags) noexcept {
  for (int i = 0; i < kTcpFlagValues; ++i) {
    if (kTrackedTcpFlags[static_cast<std::size_t>(i)] == tcp_flags) return i;
  }
  return std::nullopt;
}

std::string_view to_string(Direction d) noexcept { return d == Direction::in ? "in" : "out"; }

std::string_view to_string(Measure m) noexcept {
  switch (m) {
    case Measure::pkt: return "pkt";
    case Measure::byt: return "byt";
    case Measure::flow: return "flow";
  }
  return "?";
}

std::string_view to_string(ProtocolClass p) noexcept {
  switch (p) {
    case ProtocolClass::icmp: return "icmp";
    case ProtocolClass::tcp: return "tcp";
    case ProtocolClass::udp: return "udp";
    case ProtocolClass::other: return "other";
  }
  return "?";
}

std::string_view to_string(PortCategory p) noexcept {
  switch (p) {
    case PortCategory::p0: return "0";
    case PortCategory::p53: return "53";
    case PortCategory::p80: return "80";
    case PortCategory::p123: return "123";
    case PortCategory::p443: return "443";
    case PortCategory::well_known: return "well_known";
    case PortCategory::registered: return "registered";
    case PortCategory::private_range: return "private";
  }
  return "?";
}

std::string FeatureDescriptor::name() const {
  std::string n;
  n += to_string(direction);
  n += '_';
  n += to_string(measure);
  n += '_';
  switch (kind) {
    case SelectorKind::volume: n += "volume"; break;
    case SelectorKind::protocol:
      n += "proto_";
      n += to_string(static_cast<ProtocolClass>(value));
      break;
    case SelectorKind::port:
      n += "port_";
      n += to_string(static_cast<PortCategory>(value));
      break;
    case SelectorKind::tcp_flag:
      n += "flag_";
      n += std::to_string(kTrackedTcpFlags[value]);
      break;
  }
  return n;
}

std::string_view to_string(SchemaVariant v) noexcept { return v == SchemaVariant::full ? "full" : "light"; }

SchemaVariant parse_schema_variant(std::string_view text) {
  if (text == "full" || text == "full-86") return SchemaVariant::full;
  if (text == "light" || text == "light-6") return SchemaVariant::light;
  throw ValidationError("unknown schema variant '" + std::string(text) + "'");
}

FeatureSchema::FeatureSchema(SchemaVariant v) : variant_(v) {
  volume_.fill(-1);
  protocol_.fill(-1);
  port_.fill(-1);
  flag_.fill(-1);

  auto push = [this](Direction d, Measure m, SelectorKind k, std::uint8_t value) {
    features_.push_back({d, m, k, value});
    return static_cast<int>(features_.size()) - 1;
  };
  auto dm = [](int d, int m) { return d * kMeasures + m; };

  for (int d = 0; d < kDirections; ++d)
    for (int m = 0; m < kMeasures; ++m)
      volume_[static_cast<std::size_t>(dm(d, m))] =
          push(Direction(d), Measure(m), SelectorKind::volume, 0);

  if (v == SchemaVariant::full) {
    for (int p = 0; p < kProtocolClasses; ++p)
      for (int d = 0; d < kDirections; ++d)
        for (int m = 0; m < kMeasures; ++m)
          protocol_[static_cast<std::size_t>(p * kDirections * kMeasures + dm(d, m))] =
              push(Direction(d), Measure(m), SelectorKind::protocol, static_cast<std::uint8_t>(p));
    for (int c = 0; c < kPortCategories; ++c)
      for (int d = 0; d < kDirections; ++d)
        for (int m = 0; m < kMeasures; ++m)
          port_[static_cast<std::size_t>(c * kDirections * kMeasures + dm(d, m))] =
              push(Direction(d), Measure(m), SelectorKind::port, static_cast<std::uint8_t>(c));
    for (int f = 0; f < kTcpFlagValues; ++f)
      flag_[static_cast<std::size_t>(f)] =
          push(Direction::out, Measure::flow, SelectorKind::tcp_flag, static_cast<std::uint8_t>(f));
  }

  std::string joined;
  for (const auto& f : features_) {
    joined += f.name();
    joined += ',';
  }
  hash_ = hex64(fnv1a(joined));
}

FeatureSchema FeatureSchema::full() { return FeatureSchema(SchemaVariant::full); }
FeatureSchema FeatureSchema::light() { return FeatureSchema(SchemaVariant::light); }
FeatureSchema FeatureSchema::make(SchemaVariant v) { return FeatureSchema(v); }

int FeatureSchema::volume_index(Direction d, Measure m) const noexcept {
  return volume_[static_cast<std::size_t>(int(d) * kMeasures + int(m))];
}

int FeatureSchema::protocol_index(ProtocolClass p, Direction d, Measure m) const noexcept {
  return protocol_[static_cast<std::size_t>(int(p) * kDirections * kMeasures + int(d) * kMeasures + int(m))];
}

int FeatureSchema::port_index(PortCategory c, Direction d, Measure m) const noexcept {
  return port_[static_cast<std::size_t>(int(c) * kDirections * kMeasures + int(d) * kMeasures + int(m))];
}

int FeatureSchema::flag_index(int flag_slot) const noexcept {
  if (flag_slot < 0 || flag_slot >= kTcpFlagValues) return -1;
  return flag_[static_cast<std::size_t>(flag_slot)];
}

int FeatureSchema::find(std::string_view name) const {
  for (int i = 0; i < size(); ++i) {
    if (features_[static_cast<std::size_t>(i)].name() == name) return i;
  }
  return -1;
}

std::uint64_t fnv1a(std::string_view data, std::uint64_t seed) noexcept {
  std::uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace nfgen
