#include "nfgen/labels.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <string>

#include "nfgen/error.hpp"

namespace nfgen {

std::string_view to_string(AttackType t) noexcept {
  switch (t) {
    case AttackType::dns:
      return "dns";
    case AttackType::udp:
      return "udp";
    case AttackType::ntp:
      return "ntp";
    case AttackType::none:
      break;
  }
  return "none";
}

AttackType parse_attack_type(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "dns") return AttackType::dns;
  if (lower == "udp") return AttackType::udp;
  if (lower == "ntp") return AttackType::ntp;
  if (lower == "none") return AttackType::none;
  throw ValidationError("unknown attack type '" + std::string(text) + "'");
}

namespace {

template <typename T>
T parse_int(std::string_view s, std::size_t line, const char* what) {
  T v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw ParseError(line, std::string("bad ") + what);
  return v;
}

}  // namespace

std::vector<AttackLabel> read_labels_csv(std::istream& in) {
  std::vector<AttackLabel> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != "node_id,start_minute,end_minute,attack_type") {
        throw ParseError(1, "expected header 'node_id,start_minute,end_minute,attack_type'");
      }
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string_view> cols;
    std::string_view rest(line);
    for (std::size_t pos; (pos = rest.find(',')) != std::string_view::npos; rest.remove_prefix(pos + 1)) {
      cols.push_back(rest.substr(0, pos));
    }
    cols.push_back(rest);
    if (cols.size() != 4) throw ParseError(line_no, "expected 4 columns");
    AttackLabel l;
    l.node = parse_int<int>(cols[0], line_no, "node_id");
    l.start_minute = parse_int<std::int64_t>(cols[1], line_no, "start_minute");
    l.end_minute = parse_int<std::int64_t>(cols[2], line_no, "end_minute");
    try {
      l.type = parse_attack_type(cols[3]);
    } catch (const ValidationError& e) {
      throw ParseError(line_no, e.what());
    }
    if (l.end_minute <= l.start_minute) throw ParseError(line_no, "end_minute must be after start_minute");
    out.push_back(l);
  }
  return out;
}

std::vector<AttackLabel> read_labels_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact(path.string());
  return read_labels_csv(in);
}

void write_labels_csv(std::ostream& out, const std::vector<AttackLabel>& labels) {
  out << "node_id,start_minute,end_minute,attack_type\n";
  for (const auto& l : labels) {
    out << l.node << ',' << l.start_minute << ',' << l.end_minute << ',' << to_string(l.type) << '\n';
  }
}

}  // namespace nfgen
