#include "nfgen/registry.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>

#include "nfgen/error.hpp"

namespace nfgen {

int NodeRegistry::add(Ipv4 ip, const std::string& customer) {
  if (by_ip_.count(ip)) throw ValidationError("duplicate node ip " + format_ipv4(ip));
  int node = node_count();
  auto [it, inserted] = by_customer_.try_emplace(customer, customer_count());
  if (inserted) customer_names_.push_back(customer);
  ips_.push_back(ip);
  customer_of_.push_back(it->second);
  by_ip_.emplace(ip, node);
  return node;
}

std::optional<int> NodeRegistry::find(Ipv4 ip) const {
  auto it = by_ip_.find(ip);
  if (it == by_ip_.end()) return std::nullopt;
  return it->second;
}

NodeRegistry NodeRegistry::read_csv(std::istream& in) {
  struct Row {
    Ipv4 ip;
    int node;
    std::string customer;
  };
  std::vector<Row> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != "ip,node_id,customer_id") throw ParseError(1, "expected header 'ip,node_id,customer_id'");
      continue;
    }
    if (line.empty()) continue;
    auto c1 = line.find(',');
    auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos) throw ParseError(line_no, "expected 3 columns");
    auto ip = parse_ipv4(std::string_view(line).substr(0, c1));
    if (!ip) throw ParseError(line_no, "bad ip");
    int node = -1;
    auto node_text = std::string_view(line).substr(c1 + 1, c2 - c1 - 1);
    auto res = std::from_chars(node_text.data(), node_text.data() + node_text.size(), node);
    if (res.ec != std::errc{} || res.ptr != node_text.data() + node_text.size() || node < 0) {
      throw ParseError(line_no, "bad node_id");
    }
    std::string customer = line.substr(c2 + 1);
    if (customer.empty()) throw ParseError(line_no, "empty customer_id");
    rows.push_back({*ip, node, customer});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.node < b.node; });
  NodeRegistry reg;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].node != static_cast<int>(i)) {
      throw ValidationError("node ids must be dense 0..V-1; missing or duplicate id near " +
                            std::to_string(i));
    }
    reg.add(rows[i].ip, rows[i].customer);
  }
  return reg;
}

NodeRegistry NodeRegistry::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact(path.string());
  return read_csv(in);
}

void NodeRegistry::write_csv(std::ostream& out) const {
  out << "ip,node_id,customer_id\n";
  for (int v = 0; v < node_count(); ++v) {
    out << format_ipv4(ip(v)) << ',' << v << ',' << customer_name(customer_of(v)) << '\n';
  }
}

}  // namespace nfgen
