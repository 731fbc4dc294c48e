#include "nfgen/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

#include "nfgen/error.hpp"
#include "nfgen/seed.hpp"

namespace nfgen {

namespace {

constexpr double kInboundShare = 0.5;

using Rng = std::mt19937_64;

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

Ipv4 external_ip(Rng& rng) {
  // 198.18.0.0/15, never a monitored address.
  return (198u << 24) | (18u << 16) | static_cast<Ipv4>(uniform_int(rng, 0, (1 << 17) - 1));
}

std::uint16_t ephemeral_port(Rng& rng) { return static_cast<std::uint16_t>(uniform_int(rng, 49152, 65535)); }

std::uint16_t tcp_service_port(Rng& rng) {
  static constexpr std::uint16_t kWellKnown[] = {21, 22, 25, 110, 143, 993};
  const double u = uniform01(rng);
  if (u < 0.45) return 443;
  if (u < 0.65) return 80;
  if (u < 0.75) return kWellKnown[uniform_int(rng, 0, 5)];
  if (u < 0.90) return static_cast<std::uint16_t>(uniform_int(rng, 1024, 49151));
  if (u < 0.99) return ephemeral_port(rng);
  return 0;
}

std::uint16_t udp_service_port(Rng& rng) {
  static constexpr std::uint16_t kWellKnown[] = {67, 161, 500, 514};
  const double u = uniform01(rng);
  if (u < 0.35) return 53;
  if (u < 0.45) return 123;
  if (u < 0.60) return 443;
  if (u < 0.65) return kWellKnown[uniform_int(rng, 0, 3)];
  if (u < 0.80) return static_cast<std::uint16_t>(uniform_int(rng, 1024, 49151));
  if (u < 0.99) return ephemeral_port(rng);
  return 0;
}

std::uint8_t tcp_flags(Rng& rng) {
  static constexpr std::uint8_t kValues[] = {16, 24, 2, 17, 18, 4, 25, 0, 3, 20, 26, 27};
  static constexpr double kWeights[] = {40, 25, 10, 8, 7, 3, 3, 2, 0.5, 0.5, 0.5, 0.5};
  std::discrete_distribution<int> d(std::begin(kWeights), std::end(kWeights));
  return kValues[d(rng)];
}

FlowRecord background_flow(Rng& rng, Ipv4 node, std::int64_t minute) {
  FlowRecord r;
  r.timestamp_s = minute * 60 + uniform_int(rng, 0, 59);
  const bool inbound = uniform01(rng) < kInboundShare;
  const double p = uniform01(rng);
  std::uint16_t service = 0;
  if (p < 0.70) {
    r.protocol = ip_proto::kTcp;
    service = tcp_service_port(rng);
    r.tcp_flags = tcp_flags(rng);
  } else if (p < 0.95) {
    r.protocol = ip_proto::kUdp;
    service = udp_service_port(rng);
  } else if (p < 0.99) {
    r.protocol = ip_proto::kIcmp;
  } else {
    r.protocol = 47;  // GRE
  }
  std::uint16_t node_port = 0, peer_port = 0;
  if (r.protocol == ip_proto::kTcp || r.protocol == ip_proto::kUdp) {
    // The node is the server for 60% of its flows.
    if (uniform01(rng) < 0.6) {
      node_port = service;
      peer_port = ephemeral_port(rng);
    } else {
      node_port = ephemeral_port(rng);
      peer_port = service;
    }
  }
  const Ipv4 peer = external_ip(rng);
  if (inbound) {
    r.src_ip = peer;
    r.dst_ip = node;
    r.src_port = peer_port;
    r.dst_port = node_port;
  } else {
    r.src_ip = node;
    r.dst_ip = peer;
    r.src_port = node_port;
    r.dst_port = peer_port;
  }
  r.packets = static_cast<std::uint64_t>(uniform_int(rng, 1, 10));
  r.bytes = r.packets * static_cast<std::uint64_t>(uniform_int(rng, 64, 1500));
  return r;
}

FlowRecord attack_flow(Rng& rng, AttackType type, Ipv4 node, std::int64_t minute) {
  FlowRecord r;
  r.timestamp_s = minute * 60 + uniform_int(rng, 0, 59);
  r.protocol = ip_proto::kUdp;
  r.src_ip = external_ip(rng);
  r.dst_ip = node;
  r.packets = static_cast<std::uint64_t>(uniform_int(rng, 1, 10));
  int bpp = 0;
  switch (type) {
    case AttackType::dns:
      r.src_port = 53;
      r.dst_port = 53;
      bpp = uniform_int(rng, 1200, 1500);
      break;
    case AttackType::ntp:
      r.src_port = 123;
      r.dst_port = 123;
      bpp = uniform_int(rng, 440, 490);
      break;
    default:
      r.src_port = static_cast<std::uint16_t>(uniform_int(rng, 1024, 65535));
      r.dst_port = static_cast<std::uint16_t>(uniform_int(rng, 1024, 65535));
      bpp = uniform_int(rng, 64, 1500);
      break;
  }
  r.bytes = r.packets * static_cast<std::uint64_t>(bpp);
  return r;
}

bool conflicts(const AttackLabel& a, const std::vector<AttackLabel>& placed, int guard) {
  for (const auto& b : placed) {
    if (a.node != b.node) continue;
    if (a.start_minute < b.end_minute + guard && b.start_minute < a.end_minute + guard) return true;
  }
  return false;
}

}  // namespace

void SynthConfig::validate() const {
  auto fail = [](const std::string& what) { throw ValidationError("synth config: " + what); };
  if (nodes < 1) fail("nodes must be >= 1");
  if (customers < 1 || customers > nodes) fail("customers must be in [1, nodes]");
  if (span_minutes < 1) fail("span_minutes must be >= 1");
  if (!(rate_median > 0.0) || rate_sigma < 0.0) fail("rate must be positive");
  if (!(diurnal_amplitude >= 0.0 && diurnal_amplitude < 1.0)) fail("diurnal amplitude must be in [0, 1)");
  if (noise < 0.0) fail("noise must be >= 0");
  if (!(magnitude > 1.0)) fail("magnitude must be > 1");
  if (duration_min < 1 || duration_max < duration_min) fail("durations must satisfy 1 <= min <= max");
  if (type_mix[0] < 0 || type_mix[1] < 0 || type_mix[2] < 0 || type_mix[0] + type_mix[1] + type_mix[2] <= 0) {
    fail("type mix needs a positive weight");
  }
  if (attack_guard < 0) fail("attack guard must be >= 0");
  for (const auto& r : attack_regions) {
    if (r.count < 0 || r.begin < 0 || r.end > span_minutes || r.end - r.begin < duration_min) {
      fail("attack region [" + std::to_string(r.begin) + ", " + std::to_string(r.end) + ") does not fit the span");
    }
  }
}

json SynthConfig::to_json() const {
  json regions = json::array();
  for (const auto& r : attack_regions) regions.push_back({{"count", r.count}, {"begin", r.begin}, {"end", r.end}});
  json explicit_attacks = json::array();
  for (const auto& a : attacks) {
    explicit_attacks.push_back(
        {{"node", a.node}, {"start", a.start_minute}, {"end", a.end_minute}, {"type", to_string(a.type)}});
  }
  return json{{"nodes", nodes},
              {"customers", customers},
              {"span_minutes", span_minutes},
              {"start_minute", start_minute},
              {"rate_median", rate_median},
              {"rate_sigma", rate_sigma},
              {"diurnal_amplitude", diurnal_amplitude},
              {"diurnal_phase", diurnal_phase},
              {"phase_jitter", phase_jitter},
              {"noise", noise},
              {"magnitude", magnitude},
              {"duration_min", duration_min},
              {"duration_max", duration_max},
              {"type_mix", type_mix},
              {"attack_regions", regions},
              {"attacks", explicit_attacks},
              {"attack_guard", attack_guard},
              {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const json& doc) {
  SynthConfig c;
  c.nodes = doc.value("nodes", c.nodes);
  c.customers = doc.value("customers", c.customers);
  c.span_minutes = doc.value("span_minutes", c.span_minutes);
  c.start_minute = doc.value("start_minute", c.start_minute);
  c.rate_median = doc.value("rate_median", c.rate_median);
  c.rate_sigma = doc.value("rate_sigma", c.rate_sigma);
  c.diurnal_amplitude = doc.value("diurnal_amplitude", c.diurnal_amplitude);
  c.diurnal_phase = doc.value("diurnal_phase", c.diurnal_phase);
  c.phase_jitter = doc.value("phase_jitter", c.phase_jitter);
  c.noise = doc.value("noise", c.noise);
  c.magnitude = doc.value("magnitude", c.magnitude);
  c.duration_min = doc.value("duration_min", c.duration_min);
  c.duration_max = doc.value("duration_max", c.duration_max);
  c.type_mix = doc.value("type_mix", c.type_mix);
  c.attack_guard = doc.value("attack_guard", c.attack_guard);
  c.seed = doc.value("seed", c.seed);
  if (doc.contains("attack_regions")) {
    for (const auto& r : doc.at("attack_regions")) {
      c.attack_regions.push_back({r.at("count").get<int>(), r.at("begin").get<int>(), r.at("end").get<int>()});
    }
  }
  if (doc.contains("attacks")) {
    for (const auto& a : doc.at("attacks")) {
      c.attacks.push_back({a.at("node").get<int>(), a.at("start").get<std::int64_t>(), a.at("end").get<std::int64_t>(),
                           parse_attack_type(a.at("type").get<std::string>())});
    }
  }
  return c;
}

SyntheticTraffic::SyntheticTraffic(SynthConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(mix_seed(cfg_.seed, 1));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int v = 0; v < cfg_.nodes; ++v) {
    base_rate_.push_back(cfg_.rate_median * std::exp(cfg_.rate_sigma * normal(rng)));
    phase_.push_back(cfg_.diurnal_phase + cfg_.phase_jitter * (2.0 * uniform01(rng) - 1.0));
  }
  place_attacks();
}

void SyntheticTraffic::place_attacks() {
  const std::int64_t t0 = cfg_.start_minute;
  for (const auto& a : cfg_.attacks) {
    if (a.node < 0 || a.node >= cfg_.nodes) throw ValidationError("explicit attack on unknown node");
    if (a.start_minute < t0 || a.end_minute > t0 + cfg_.span_minutes || a.duration() < 1) {
      throw ValidationError("explicit attack outside the generated span");
    }
    if (a.type == AttackType::none) throw ValidationError("explicit attack needs a type");
    if (conflicts(a, attacks_, cfg_.attack_guard)) throw ValidationError("explicit attacks overlap on one node");
    attacks_.push_back(a);
  }

  Rng rng(mix_seed(cfg_.seed, 2));
  std::discrete_distribution<int> type(cfg_.type_mix.begin(), cfg_.type_mix.end());
  static constexpr AttackType kTypes[] = {AttackType::dns, AttackType::udp, AttackType::ntp};
  constexpr int kAttempts = 10000;
  for (const auto& region : cfg_.attack_regions) {
    for (int i = 0; i < region.count; ++i) {
      bool placed = false;
      for (int attempt = 0; attempt < kAttempts && !placed; ++attempt) {
        const int duration = uniform_int(rng, cfg_.duration_min, std::min(cfg_.duration_max, region.end - region.begin));
        AttackLabel a;
        a.node = uniform_int(rng, 0, cfg_.nodes - 1);
        a.start_minute = t0 + uniform_int(rng, region.begin, region.end - duration);
        a.end_minute = a.start_minute + duration;
        a.type = kTypes[type(rng)];
        if (!conflicts(a, attacks_, cfg_.attack_guard)) {
          attacks_.push_back(a);
          placed = true;
        }
      }
      if (!placed) {
        throw ValidationError("cannot place " + std::to_string(region.count) + " attacks in minutes [" +
                              std::to_string(region.begin) + ", " + std::to_string(region.end) +
                              ") without overlap; widen the region or lower the count");
      }
    }
  }
  std::sort(attacks_.begin(), attacks_.end(), [](const AttackLabel& a, const AttackLabel& b) {
    return a.start_minute != b.start_minute ? a.start_minute < b.start_minute : a.node < b.node;
  });
}

Ipv4 SyntheticTraffic::node_ip(int node) noexcept {
  return (10u << 24) | (static_cast<Ipv4>(node / 250) << 8) | static_cast<Ipv4>(node % 250 + 1);
}

NodeRegistry SyntheticTraffic::registry() const {
  NodeRegistry reg;
  for (int v = 0; v < cfg_.nodes; ++v) {
    char name[32];
    std::snprintf(name, sizeof name, "cust-%03d", v % cfg_.customers);
    reg.add(node_ip(v), name);
  }
  return reg;
}

double SyntheticTraffic::expected_rate(int node, int minute) const {
  const double mod = static_cast<double>((cfg_.start_minute + minute) % 1440);
  const double angle = 2.0 * std::numbers::pi * (mod - phase_[static_cast<std::size_t>(node)]) / 1440.0;
  return base_rate_[static_cast<std::size_t>(node)] * (1.0 + cfg_.diurnal_amplitude * std::sin(angle));
}

GroundTruth SyntheticTraffic::generate(const FlowSink& sink) const {
  GroundTruth gt;
  gt.nodes = cfg_.nodes;
  gt.minutes = cfg_.span_minutes;
  gt.attacks = attacks_;
  gt.in_flows.assign(static_cast<std::size_t>(cfg_.nodes) * static_cast<std::size_t>(cfg_.span_minutes), 0);
  for (const auto& a : attacks_) gt.anomalous_bytes.emplace_back(static_cast<std::size_t>(a.duration()), 0.0);

  // Active attack per node, advanced as minutes pass.
  std::vector<std::vector<std::size_t>> by_node(static_cast<std::size_t>(cfg_.nodes));
  for (std::size_t i = 0; i < attacks_.size(); ++i) by_node[static_cast<std::size_t>(attacks_[i].node)].push_back(i);

  std::vector<Rng> rngs;
  for (int v = 0; v < cfg_.nodes; ++v) rngs.emplace_back(mix_seed(cfg_.seed, 3, static_cast<std::uint64_t>(v)));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double noise_shift = 0.5 * cfg_.noise * cfg_.noise;

  std::vector<FlowRecord> buffer;
  for (int t = 0; t < cfg_.span_minutes; ++t) {
    buffer.clear();
    const std::int64_t minute = cfg_.start_minute + t;
    for (int v = 0; v < cfg_.nodes; ++v) {
      auto& rng = rngs[static_cast<std::size_t>(v)];
      const Ipv4 ip = node_ip(v);
      auto& in_count = gt.in_flows[static_cast<std::size_t>(v) * static_cast<std::size_t>(cfg_.span_minutes) +
                                   static_cast<std::size_t>(t)];
      const double rate = expected_rate(v, t);
      const double lambda = rate * std::exp(cfg_.noise * normal(rng) - noise_shift);
      const int flows = std::poisson_distribution<int>(lambda)(rng);
      for (int i = 0; i < flows; ++i) {
        buffer.push_back(background_flow(rng, ip, minute));
        if (buffer.back().dst_ip == ip) ++in_count;
      }
      for (std::size_t ai : by_node[static_cast<std::size_t>(v)]) {
        const auto& a = attacks_[ai];
        if (minute < a.start_minute || minute >= a.end_minute) continue;
        const int extra = static_cast<int>(std::ceil((cfg_.magnitude - 1.0) * kInboundShare * rate));
        double& bytes = gt.anomalous_bytes[ai][static_cast<std::size_t>(minute - a.start_minute)];
        for (int i = 0; i < extra; ++i) {
          buffer.push_back(attack_flow(rng, a.type, ip, minute));
          bytes += static_cast<double>(buffer.back().bytes);
          ++in_count;
        }
      }
    }
    sink(buffer);
  }
  return gt;
}

GroundTruth SyntheticTraffic::write_csv(std::ostream& out) const {
  write_flow_csv_header(out);
  return generate([&out](std::span<const FlowRecord> flows) {
    for (const auto& r : flows) write_flow_csv_row(out, r);
  });
}

}  // namespace nfgen
