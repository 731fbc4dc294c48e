#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string_view>
#include <vector>

namespace nfgen {

enum class AttackType : std::uint8_t { none = 0, dns, udp, ntp };

std::string_view to_string(AttackType t) noexcept;
/// Accepts "dns", "udp", "ntp", "none" (case-insensitive).
AttackType parse_attack_type(std::string_view text);

/// One attack on one node over absolute epoch minutes [start_minute, end_minute).
struct AttackLabel {
  int node = 0;
  std::int64_t start_minute = 0;
  std::int64_t end_minute = 0;
  AttackType type = AttackType::none;

  std::int64_t duration() const noexcept { return end_minute - start_minute; }
  friend bool operator==(const AttackLabel&, const AttackLabel&) = default;
};

/// CSV `node_id,start_minute,end_minute,attack_type`.
std::vector<AttackLabel> read_labels_csv(std::istream& in);
std::vector<AttackLabel> read_labels_csv(const std::filesystem::path& path);
void write_labels_csv(std::ostream& out, const std::vector<AttackLabel>& labels);

}  // namespace nfgen
