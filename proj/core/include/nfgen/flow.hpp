#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace nfgen {

using Ipv4 = std::uint32_t;

namespace ip_proto {
inline constexpr std::uint8_t kIcmp = 1;
inline constexpr std::uint8_t kTcp = 6;
inline constexpr std::uint8_t kUdp = 17;
}  // namespace ip_proto

/// One sampled NetFlow record. `protocol` keeps the raw IP protocol number;
/// anything other than ICMP/TCP/UDP is bucketed as "other" by the schema.
struct FlowRecord {
  std::int64_t timestamp_s = 0;
  Ipv4 src_ip = 0;
  Ipv4 dst_ip = 0;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint8_t protocol = 0;
  std::uint8_t tcp_flags = 0;
  std::uint64_t packets = 1;
  std::uint64_t bytes = 1;

  friend bool operator==(const FlowRecord&, const FlowRecord&) = default;
};

/// Parses dotted-quad IPv4. Returns nullopt for anything else, IPv6 included.
std::optional<Ipv4> parse_ipv4(std::string_view text);
std::string format_ipv4(Ipv4 ip);

inline constexpr std::string_view kFlowCsvHeader =
    "timestamp,src_ip,dst_ip,src_port,dst_port,protocol,tcp_flags,packets,bytes";

/// Reads the flow CSV format. Throws ParseError carrying the line number of
/// the first malformed row.
std::vector<FlowRecord> parse_flow_csv(std::istream& in);

/// Streaming variant: invokes `sink` per record without materializing them.
template <typename Sink>
void for_each_flow_csv(std::istream& in, Sink&& sink);

/// Parses a single data row (no header). `line` is used for error reporting.
FlowRecord parse_flow_row(std::string_view row, std::size_t line);

void write_flow_csv_header(std::ostream& out);
void write_flow_csv_row(std::ostream& out, const FlowRecord& r);

// ---------------------------------------------------------------------------

namespace detail {
void check_flow_header(std::string_view header);
}

template <typename Sink>
void for_each_flow_csv(std::istream& in, Sink&& sink) {
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!have_header) {
      detail::check_flow_header(line);
      have_header = true;
      continue;
    }
    if (line.empty()) continue;
    sink(parse_flow_row(line, line_no));
  }
  if (!have_header) detail::check_flow_header("");
}

}  // namespace nfgen
