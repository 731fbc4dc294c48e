#pragma once

#include <cstdint>
#include <span>

#include "nfgen/flow.hpp"
#include "nfgen/registry.hpp"
#include "nfgen/schema.hpp"
#include "nfgen/tensor.hpp"

namespace nfgen {

/// Half-open range of absolute epoch minutes.
struct MinuteSpan {
  std::int64_t begin = 0;
  std::int64_t end = 0;

  std::int64_t length() const noexcept { return end - begin; }
  bool contains(std::int64_t minute) const noexcept { return minute >= begin && minute < end; }
};

/// Accumulates flow records into a per-node, per-minute feature tensor.
///
/// A record contributes to the node matching its destination (incoming,
/// keyed by destination port) and to the node matching its source (outgoing,
/// keyed by source port); a flow between two monitored nodes counts for both.
/// The whole flow is attributed to the minute of its timestamp.
class Accumulator {
 public:
  Accumulator(const NodeRegistry& registry, const FeatureSchema& schema, MinuteSpan span);

  void add(const FlowRecord& r);
  void add(std::span<const FlowRecord> records) {
    for (const auto& r : records) add(r);
  }

  /// Records outside the span or touching no monitored node.
  std::uint64_t skipped() const noexcept { return skipped_; }
  std::uint64_t accepted() const noexcept { return accepted_; }

  const RawTensor& tensor() const noexcept { return tensor_; }
  RawTensor take() { return std::move(tensor_); }

 private:
  void add_side(int node, int minute, Direction dir, const FlowRecord& r);

  const NodeRegistry& registry_;
  const FeatureSchema& schema_;
  MinuteSpan span_;
  RawTensor tensor_;
  std::uint64_t skipped_ = 0;
  std::uint64_t accepted_ = 0;
};

struct AccumulateResult {
  RawTensor tensor;
  std::uint64_t skipped = 0;
};

AccumulateResult accumulate(std::span<const FlowRecord> records, const NodeRegistry& registry,
                            const FeatureSchema& schema, MinuteSpan span);

}  // namespace nfgen
