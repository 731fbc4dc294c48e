#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "nfgen/artifact.hpp"
#include "nfgen/tensor.hpp"

namespace nfgen {

inline constexpr int kDefaultBins = 10;

/// Raw-value thresholds c_0 = 0 < c_1 < ... < c_{effective-1}.
struct BinCutoffs {
  std::vector<double> cutoffs{0.0};

  int effective_bins() const noexcept { return static_cast<int>(cutoffs.size()); }
  friend bool operator==(const BinCutoffs&, const BinCutoffs&) = default;
};

/// Equal-frequency binning of the non-zero values of one series.
///
/// Zero stays alone in category 0. With the series sorted ascending and
/// indexed from 1, k is the first positive position and the tentative cutoff
/// i sits at position k-1+i*delta, delta = round((T-(k-1))/(N-1)) (half away
/// from zero, at least 1; positions past T clamp to T). A tentative cutoff
/// that does not exceed its predecessor is replaced by the next larger value,
/// and the following tentative cutoff is re-spaced from there. When no larger
/// value exists the remaining categories are dropped.
BinCutoffs fit_bins(std::span<const double> series, int bins);

/// 0 for x = 0; i for c_{i-1} < x <= c_i; values above the last cutoff clamp
/// to the top category. Positive values never map to category 0.
int discretize_value(double x, const BinCutoffs& cutoffs) noexcept;

/// (min, max, p25, p50, p75) of the standardized features, averaged over features.
using NodeSummary = std::array<double, 5>;

/// Summary of minutes [begin, end) of node v; whole span by default.
NodeSummary summarize_node(const RawTensor& tensor, int node, int begin = 0, int end = -1);

/// Percentile with linear interpolation between order statistics; q in [0, 1].
double percentile_sorted(std::span<const double> sorted, double q);

double l1_distance(const NodeSummary& a, const NodeSummary& b) noexcept;

/// Index of the summary closest in L1 distance; ties go to the lowest index.
int nearest_training_node(const NodeSummary& summary, std::span<const NodeSummary> training);

/// Per-(node, feature) cutoffs fitted on a training tensor.
class Discretizer {
 public:
  Discretizer() = default;

  /// Fits every (node, feature) on minutes [begin, end) of `tensor`.
  static Discretizer fit(const RawTensor& tensor, int bins = kDefaultBins, int begin = 0, int end = -1);

  int bins() const noexcept { return bins_; }
  int nodes() const noexcept { return nodes_; }
  int features() const noexcept { return features_; }
  const std::string& schema_hash() const noexcept { return schema_hash_; }

  const BinCutoffs& cutoffs(int node, int feature) const {
    return cutoffs_.at(static_cast<std::size_t>(node) * static_cast<std::size_t>(features_) +
                       static_cast<std::size_t>(feature));
  }
  const std::vector<NodeSummary>& summaries() const noexcept { return summaries_; }

  /// Tokenizes a tensor whose node v was part of the fit.
  TokenTensor transform(const RawTensor& tensor) const;

  /// Tokenizes a tensor whose node v reuses the cutoffs of training node `node_map[v]`.
  TokenTensor transform(const RawTensor& tensor, std::span<const int> node_map) const;

  /// For each node of `tensor`, the training node with the closest summary.
  std::vector<int> map_unseen(const RawTensor& tensor) const;

  json to_json() const;
  static Discretizer from_json(const json& doc);

  friend bool operator==(const Discretizer&, const Discretizer&) = default;

 private:
  int bins_ = kDefaultBins;
  int nodes_ = 0;
  int features_ = 0;
  std::string schema_hash_;
  std::vector<BinCutoffs> cutoffs_;
  std::vector<NodeSummary> summaries_;
};

}  // namespace nfgen
