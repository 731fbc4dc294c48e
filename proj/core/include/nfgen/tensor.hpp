#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nfgen/error.hpp"

namespace nfgen {

/// Dense (node, minute, feature) array in row-major order. Minute index 0
/// corresponds to absolute epoch minute `start_minute()`.
template <typename T>
class Tensor3 {
 public:
  using value_type = T;

  Tensor3() = default;
  Tensor3(int nodes, int minutes, int features, std::int64_t start_minute, std::string schema_hash)
      : nodes_(nodes),
        minutes_(minutes),
        features_(features),
        start_minute_(start_minute),
        schema_hash_(std::move(schema_hash)),
        data_(static_cast<std::size_t>(nodes) * static_cast<std::size_t>(minutes) *
                  static_cast<std::size_t>(features),
              T{}) {
    if (nodes < 0 || minutes < 0 || features < 0) throw ValidationError("negative tensor dimension");
  }

  int nodes() const noexcept { return nodes_; }
  int minutes() const noexcept { return minutes_; }
  int features() const noexcept { return features_; }
  std::int64_t start_minute() const noexcept { return start_minute_; }
  std::int64_t epoch_anchor_s() const noexcept { return start_minute_ * 60; }
  const std::string& schema_hash() const noexcept { return schema_hash_; }

  std::size_t index(int v, int t, int f) const noexcept {
    return (static_cast<std::size_t>(v) * static_cast<std::size_t>(minutes_) + static_cast<std::size_t>(t)) *
               static_cast<std::size_t>(features_) +
           static_cast<std::size_t>(f);
  }

  T& at(int v, int t, int f) noexcept { return data_[index(v, t, f)]; }
  const T& at(int v, int t, int f) const noexcept { return data_[index(v, t, f)]; }

  std::span<T> step(int v, int t) noexcept { return {data_.data() + index(v, t, 0), static_cast<std::size_t>(features_)}; }
  std::span<const T> step(int v, int t) const noexcept {
    return {data_.data() + index(v, t, 0), static_cast<std::size_t>(features_)};
  }

  /// Contiguous minutes [t, t + len) of node v, all features.
  std::span<const T> window(int v, int t, int len) const noexcept {
    return {data_.data() + index(v, t, 0), static_cast<std::size_t>(len) * static_cast<std::size_t>(features_)};
  }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  /// Values of one feature over minutes [begin, end).
  std::vector<T> series(int v, int f, int begin, int end) const {
    std::vector<T> out;
    out.reserve(static_cast<std::size_t>(end - begin));
    for (int t = begin; t < end; ++t) out.push_back(at(v, t, f));
    return out;
  }

  /// Copy of minutes [begin, end) for all nodes.
  Tensor3 slice_minutes(int begin, int end) const {
    if (begin < 0 || end > minutes_ || begin > end) throw ValidationError("minute slice out of range");
    Tensor3 out(nodes_, end - begin, features_, start_minute_ + begin, schema_hash_);
    for (int v = 0; v < nodes_; ++v) {
      auto src = window(v, begin, end - begin);
      std::copy(src.begin(), src.end(), out.data_.begin() + static_cast<std::ptrdiff_t>(out.index(v, 0, 0)));
    }
    return out;
  }

  /// Elementwise sum; used to merge partial tensors built from file shards.
  Tensor3& operator+=(const Tensor3& other) {
    if (nodes_ != other.nodes_ || minutes_ != other.minutes_ || features_ != other.features_ ||
        start_minute_ != other.start_minute_ || schema_hash_ != other.schema_hash_) {
      throw SchemaMismatch("cannot merge tensors with different shapes or schemas");
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  int nodes_ = 0;
  int minutes_ = 0;
  int features_ = 0;
  std::int64_t start_minute_ = 0;
  std::string schema_hash_;
  std::vector<T> data_;
};

using RawTensor = Tensor3<double>;
using TokenTensor = Tensor3<std::uint8_t>;

}  // namespace nfgen
