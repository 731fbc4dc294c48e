#include "nfgen/flow.hpp"

#include <array>
#include <charconv>

#include "nfgen/error.hpp"

namespace nfgen {

namespace {

template <typename T>
bool parse_uint(std::string_view s, T& out) {
  if (s.empty()) return false;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::optional<Ipv4> parse_ipv4(std::string_view text) {
  Ipv4 ip = 0;
  for (int octet = 0; octet < 4; ++octet) {
    auto dot = text.find('.');
    std::string_view part = octet < 3 ? text.substr(0, dot) : text;
    if (octet < 3 && dot == std::string_view::npos) return std::nullopt;
    if (part.empty() || part.size() > 3) return std::nullopt;
    unsigned value = 0;
    if (!parse_uint(part, value) || value > 255) return std::nullopt;
    ip = (ip << 8) | value;
    if (octet < 3) text.remove_prefix(dot + 1);
  }
  return ip;
}

std::string format_ipv4(Ipv4 ip) {
  return std::to_string((ip >> 24) & 0xff) + "." + std::to_string((ip >> 16) & 0xff) + "." +
         std::to_string((ip >> 8) & 0xff) + "." + std::to_string(ip & 0xff);
}

namespace detail {
void check_flow_header(std::string_view header) {
  if (trim(header) != kFlowCsvHeader) {
    throw ParseError(1, "expected header '" + std::string(kFlowCsvHeader) + "'");
  }
}
}  // namespace detail

FlowRecord parse_flow_row(std::string_view row, std::size_t line) {
  std::array<std::string_view, 9> cols;
  std::size_t n = 0;
  while (true) {
    auto comma = row.find(',');
    if (n == cols.size()) throw ParseError(line, "too many columns");
    cols[n++] = trim(row.substr(0, comma));
    if (comma == std::string_view::npos) break;
    row.remove_prefix(comma + 1);
  }
  if (n != cols.size()) {
    throw ParseError(line, "expected 9 columns, got " + std::to_string(n));
  }

  FlowRecord r;
  auto fail = [line](const char* field, std::string_view v) {
    throw ParseError(line, std::string("bad ") + field + " '" + std::string(v) + "'");
  };

  if (!parse_uint(cols[0], r.timestamp_s)) {
    std::int64_t ts = 0;
    auto res = std::from_chars(cols[0].data(), cols[0].data() + cols[0].size(), ts);
    if (res.ec != std::errc{} || res.ptr != cols[0].data() + cols[0].size()) fail("timestamp", cols[0]);
    r.timestamp_s = ts;
  }
  for (int k : {1, 2}) {
    if (cols[k].find(':') != std::string_view::npos) {
      throw ParseError(line, "IPv6 address '" + std::string(cols[k]) + "' is not supported");
    }
    auto ip = parse_ipv4(cols[k]);
    if (!ip) fail(k == 1 ? "src_ip" : "dst_ip", cols[k]);
    (k == 1 ? r.src_ip : r.dst_ip) = *ip;
  }
  unsigned port = 0;
  if (!parse_uint(cols[3], port) || port > 65535) fail("src_port", cols[3]);
  r.src_port = static_cast<std::uint16_t>(port);
  if (!parse_uint(cols[4], port) || port > 65535) fail("dst_port", cols[4]);
  r.dst_port = static_cast<std::uint16_t>(port);
  unsigned small = 0;
  if (!parse_uint(cols[5], small) || small > 255) fail("protocol", cols[5]);
  r.protocol = static_cast<std::uint8_t>(small);
  if (!parse_uint(cols[6], small) || small > 255) fail("tcp_flags", cols[6]);
  r.tcp_flags = static_cast<std::uint8_t>(small);
  if (!parse_uint(cols[7], r.packets)) fail("packets", cols[7]);
  if (!parse_uint(cols[8], r.bytes)) fail("bytes", cols[8]);
  if (r.packets < 1) throw ParseError(line, "packets must be >= 1");
  if (r.bytes < r.packets) throw ParseError(line, "bytes < packets");
  return r;
}

std::vector<FlowRecord> parse_flow_csv(std::istream& in) {
  std::vector<FlowRecord> out;
  for_each_flow_csv(in, [&out](const FlowRecord& r) { out.push_back(r); });
  return out;
}

void write_flow_csv_header(std::ostream& out) { out << kFlowCsvHeader << '\n'; }

void write_flow_csv_row(std::ostream& out, const FlowRecord& r) {
  out << r.timestamp_s << ',' << format_ipv4(r.src_ip) << ',' << format_ipv4(r.dst_ip) << ','
      << r.src_port << ',' << r.dst_port << ',' << unsigned(r.protocol) << ','
      << unsigned(r.tcp_flags) << ',' << r.packets << ',' << r.bytes << '\n';
}

}  // namespace nfgen
