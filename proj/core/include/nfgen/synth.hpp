#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "nfgen/artifact.hpp"
#include "nfgen/flow.hpp"
#include "nfgen/labels.hpp"
#include "nfgen/registry.hpp"

namespace nfgen {

/// Place `count` random attacks with start minutes in [begin, end - duration],
/// relative to the start of the span.
struct AttackRegion {
  int count = 0;
  int begin = 0;
  int end = 0;
};

struct SynthConfig {
  int nodes = 50;
  int customers = 10;
  int span_minutes = 20000;
  /// Absolute epoch minute of the first generated minute (2023-11-14 00:00 UTC).
  std::int64_t start_minute = 1699920000 / 60;
  /// Per-node background flow rate (flows per minute) is log-normal across nodes.
  double rate_median = 8.0;
  double rate_sigma = 0.8;
  double diurnal_amplitude = 0.5;
  /// Minute of day at which the diurnal sine crosses upward, and per-node jitter.
  double diurnal_phase = 360.0;
  double phase_jitter = 120.0;
  /// Multiplicative log-normal per-minute rate noise (sigma of the log).
  double noise = 0.1;

  double magnitude = 10.0;
  int duration_min = 10;
  int duration_max = 60;
  /// Relative weights of DNS, UDP, NTP attacks.
  std::array<double, 3> type_mix{1.0, 1.0, 1.0};
  std::vector<AttackRegion> attack_regions;
  /// Explicit attacks in absolute minutes, placed in addition to the regions.
  std::vector<AttackLabel> attacks;
  /// Minimum attack-free gap between two attacks on the same node.
  int attack_guard = 120;

  std::uint64_t seed = 0;

  void validate() const;
  json to_json() const;
  static SynthConfig from_json(const json& doc);
};

struct GroundTruth {
  int nodes = 0;
  int minutes = 0;
  std::vector<AttackLabel> attacks;
  /// Attack bytes per minute of each attack, parallel to `attacks`.
  std::vector<std::vector<double>> anomalous_bytes;
  /// Inbound flows (background plus attack) per node and minute, node-major.
  std::vector<std::uint32_t> in_flows;

  std::uint32_t in_flows_at(int node, int minute) const {
    return in_flows[static_cast<std::size_t>(node) * static_cast<std::size_t>(minutes) +
                    static_cast<std::size_t>(minute)];
  }
};

/// Receives the flows of one minute (all nodes) at a time, in minute order.
using FlowSink = std::function<void(std::span<const FlowRecord>)>;

/// Deterministic synthetic NetFlow source with diurnal background traffic and
/// injected DNS/NTP amplification and UDP flood attacks.
class SyntheticTraffic {
 public:
  /// Validates the config and places the attacks; throws ValidationError when
  /// the requested attacks cannot be placed.
  explicit SyntheticTraffic(SynthConfig cfg);

  const SynthConfig& config() const noexcept { return cfg_; }
  NodeRegistry registry() const;
  /// Placed attacks sorted by (start, node).
  const std::vector<AttackLabel>& attacks() const noexcept { return attacks_; }
  static Ipv4 node_ip(int node) noexcept;

  /// Expected background flows per minute (both directions), before noise.
  double expected_rate(int node, int minute) const;
  double base_rate(int node) const { return base_rate_.at(static_cast<std::size_t>(node)); }

  GroundTruth generate(const FlowSink& sink) const;
  /// Writes the flow CSV; returns the ground truth.
  GroundTruth write_csv(std::ostream& out) const;

 private:
  void place_attacks();

  SynthConfig cfg_;
  std::vector<double> base_rate_;
  std::vector<double> phase_;
  std::vector<AttackLabel> attacks_;
};

}  // namespace nfgen
