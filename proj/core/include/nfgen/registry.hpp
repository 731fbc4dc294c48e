#pragma once

#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "nfgen/flow.hpp"

namespace nfgen {

/// Monitored nodes (IPs) and the customers that own them. Node indices are
/// dense 0..V-1; customer indices are dense in order of first appearance.
class NodeRegistry {
 public:
  NodeRegistry() = default;

  /// Appends a node; its index is the current node count.
  int add(Ipv4 ip, const std::string& customer);

  int node_count() const noexcept { return static_cast<int>(ips_.size()); }
  int customer_count() const noexcept { return static_cast<int>(customer_names_.size()); }

  std::optional<int> find(Ipv4 ip) const;
  Ipv4 ip(int node) const { return ips_.at(static_cast<std::size_t>(node)); }
  int customer_of(int node) const { return customer_of_.at(static_cast<std::size_t>(node)); }
  const std::string& customer_name(int customer) const {
    return customer_names_.at(static_cast<std::size_t>(customer));
  }
  const std::vector<int>& customers() const noexcept { return customer_of_; }

  /// CSV `ip,node_id,customer_id`; node ids must be exactly 0..V-1.
  static NodeRegistry read_csv(std::istream& in);
  static NodeRegistry read_csv(const std::filesystem::path& path);
  void write_csv(std::ostream& out) const;

 private:
  std::vector<Ipv4> ips_;
  std::vector<int> customer_of_;
  std::vector<std::string> customer_names_;
  std::unordered_map<Ipv4, int> by_ip_;
  std::unordered_map<std::string, int> by_customer_;
};

}  // namespace nfgen
