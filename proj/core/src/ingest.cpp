#include "nfgen/ingest.hpp"

#include "nfgen/error.hpp"

namespace nfgen {

namespace {

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace

Accumulator::Accumulator(const NodeRegistry& registry, const FeatureSchema& schema, MinuteSpan span)
    : registry_(registry),
      schema_(schema),
      span_(span),
      tensor_(registry.node_count(), static_cast<int>(span.length()), schema.size(), span.begin, schema.hash()) {
  if (registry.node_count() == 0) throw ValidationError("node registry is empty");
  if (span.length() <= 0) throw ValidationError("accumulation span is empty");
}

void Accumulator::add(const FlowRecord& r) {
  std::int64_t minute = floor_div(r.timestamp_s, 60);
  if (!span_.contains(minute)) {
    ++skipped_;
    return;
  }
  int t = static_cast<int>(minute - span_.begin);
  auto dst = registry_.find(r.dst_ip);
  auto src = registry_.find(r.src_ip);
  if (!dst && !src) {
    ++skipped_;
    return;
  }
  ++accepted_;
  if (dst) add_side(*dst, t, Direction::in, r);
  if (src) add_side(*src, t, Direction::out, r);
}

void Accumulator::add_side(int node, int minute, Direction dir, const FlowRecord& r) {
  auto row = tensor_.step(node, minute);
  const double amounts[kMeasures] = {static_cast<double>(r.packets), static_cast<double>(r.bytes), 1.0};
  const ProtocolClass proto = protocol_class(r.protocol);
  const PortCategory port = port_category(dir == Direction::in ? r.dst_port : r.src_port);
  for (int m = 0; m < kMeasures; ++m) {
    const auto measure = static_cast<Measure>(m);
    for (int idx : {schema_.volume_index(dir, measure), schema_.protocol_index(proto, dir, measure),
                    schema_.port_index(port, dir, measure)}) {
      if (idx >= 0) row[static_cast<std::size_t>(idx)] += amounts[m];
    }
  }
  if (dir == Direction::out && proto == ProtocolClass::tcp) {
    if (auto slot = flag_category(r.tcp_flags)) {
      int idx = schema_.flag_index(*slot);
      if (idx >= 0) row[static_cast<std::size_t>(idx)] += 1.0;
    }
  }
}

AccumulateResult accumulate(std::span<const FlowRecord> records, const NodeRegistry& registry,
                            const FeatureSchema& schema, MinuteSpan span) {
  Accumulator acc(registry, schema, span);
  acc.add(records);
  AccumulateResult out;
  out.skipped = acc.skipped();
  out.tensor = acc.take();
  return out;
}

}  // namespace nfgen
