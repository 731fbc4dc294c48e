#include "nfgen/discretize.hpp"

#include <algorithm>
#include <cmath>

namespace nfgen {

namespace {

// Round half away from zero, never below 1.
long round_step(double numerator, double denominator) {
  long d = std::lround(numerator / denominator);
  return std::max(1L, d);
}

}  // namespace

BinCutoffs fit_bins(std::span<const double> series, int bins) {
  if (bins < 2) throw ValidationError("fit_bins needs at least 2 bins");
  if (series.empty()) throw ValidationError("fit_bins needs a non-empty series");

  std::vector<double> sorted(series.begin(), series.end());
  std::sort(sorted.begin(), sorted.end());
  const long T = static_cast<long>(sorted.size());
  // 1-based access with positions past T clamped to the maximum.
  auto at = [&](long pos) { return sorted[static_cast<std::size_t>(std::min(pos, T) - 1)]; };

  BinCutoffs out;
  auto first_pos = std::upper_bound(sorted.begin(), sorted.end(), 0.0);
  if (first_pos == sorted.end()) return out;
  const long k = static_cast<long>(first_pos - sorted.begin()) + 1;

  const long delta = round_step(static_cast<double>(T - (k - 1)), bins - 1);
  std::vector<double> tentative(static_cast<std::size_t>(bins));
  for (long i = 1; i < bins; ++i) tentative[static_cast<std::size_t>(i)] = at(k - 1 + i * delta);

  out.cutoffs.push_back(tentative[1]);
  for (int j = 2; j < bins; ++j) {
    const double prev = out.cutoffs.back();
    const double cand = tentative[static_cast<std::size_t>(j)];
    if (cand > prev) {
      out.cutoffs.push_back(cand);
      continue;
    }
    auto next = std::upper_bound(sorted.begin(), sorted.end(), prev);
    if (next == sorted.end()) break;
    const long m = static_cast<long>(next - sorted.begin()) + 1;
    out.cutoffs.push_back(*next);
    if (j + 1 < bins) {
      const long step = round_step(static_cast<double>(T - (m - 1)), bins - j);
      tentative[static_cast<std::size_t>(j + 1)] = at(m - 1 + step);
    }
  }
  return out;
}

int discretize_value(double x, const BinCutoffs& c) noexcept {
  if (!(x > 0.0)) return 0;
  const auto& cut = c.cutoffs;
  if (cut.size() <= 1) return 1;
  auto it = std::lower_bound(cut.begin() + 1, cut.end(), x);
  if (it == cut.end()) return static_cast<int>(cut.size()) - 1;
  return static_cast<int>(it - cut.begin());
}

double percentile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ValidationError("percentile of empty sequence");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

NodeSummary summarize_node(const RawTensor& tensor, int node, int begin, int end) {
  if (end < 0) end = tensor.minutes();
  const int n = end - begin;
  if (n < 1) throw ValidationError("summarize_node needs at least one minute");
  NodeSummary acc{};
  std::vector<double> z(static_cast<std::size_t>(n));
  for (int f = 0; f < tensor.features(); ++f) {
    double mean = 0.0;
    for (int t = begin; t < end; ++t) mean += tensor.at(node, t, f);
    mean /= n;
    double var = 0.0;
    for (int t = begin; t < end; ++t) {
      const double d = tensor.at(node, t, f) - mean;
      var += d * d;
    }
    var /= n;
    const double sd = std::sqrt(var);
    for (int t = begin; t < end; ++t) {
      z[static_cast<std::size_t>(t - begin)] = sd > 0.0 ? (tensor.at(node, t, f) - mean) / sd : 0.0;
    }
    std::sort(z.begin(), z.end());
    acc[0] += z.front();
    acc[1] += z.back();
    acc[2] += percentile_sorted(z, 0.25);
    acc[3] += percentile_sorted(z, 0.50);
    acc[4] += percentile_sorted(z, 0.75);
  }
  if (tensor.features() > 0) {
    for (double& a : acc) a /= tensor.features();
  }
  return acc;
}

double l1_distance(const NodeSummary& a, const NodeSummary& b) noexcept {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
  return d;
}

int nearest_training_node(const NodeSummary& summary, std::span<const NodeSummary> training) {
  if (training.empty()) throw ValidationError("no training summaries to match against");
  int best = 0;
  double best_d = l1_distance(summary, training[0]);
  for (std::size_t i = 1; i < training.size(); ++i) {
    const double d = l1_distance(summary, training[i]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

Discretizer Discretizer::fit(const RawTensor& tensor, int bins, int begin, int end) {
  if (end < 0) end = tensor.minutes();
  if (begin < 0 || end > tensor.minutes() || end - begin < 1) throw ValidationError("bad discretizer fit span");
  Discretizer d;
  d.bins_ = bins;
  d.nodes_ = tensor.nodes();
  d.features_ = tensor.features();
  d.schema_hash_ = tensor.schema_hash();
  d.cutoffs_.reserve(static_cast<std::size_t>(d.nodes_) * static_cast<std::size_t>(d.features_));
  for (int v = 0; v < d.nodes_; ++v) {
    for (int f = 0; f < d.features_; ++f) {
      auto s = tensor.series(v, f, begin, end);
      d.cutoffs_.push_back(fit_bins(s, bins));
    }
    d.summaries_.push_back(summarize_node(tensor, v, begin, end));
  }
  return d;
}

TokenTensor Discretizer::transform(const RawTensor& tensor) const {
  if (tensor.nodes() != nodes_) {
    throw ValidationError("tensor has " + std::to_string(tensor.nodes()) + " nodes; discretizer was fitted on " +
                          std::to_string(nodes_) + "; map unseen nodes first");
  }
  std::vector<int> identity(static_cast<std::size_t>(nodes_));
  for (int v = 0; v < nodes_; ++v) identity[static_cast<std::size_t>(v)] = v;
  return transform(tensor, identity);
}

TokenTensor Discretizer::transform(const RawTensor& tensor, std::span<const int> node_map) const {
  if (tensor.schema_hash() != schema_hash_) {
    throw SchemaMismatch("discretizer schema " + schema_hash_ + " does not match tensor schema " +
                         tensor.schema_hash());
  }
  if (tensor.features() != features_) throw SchemaMismatch("feature count differs from discretizer");
  if (static_cast<int>(node_map.size()) != tensor.nodes()) throw ValidationError("node map size mismatch");

  TokenTensor out(tensor.nodes(), tensor.minutes(), tensor.features(), tensor.start_minute(), tensor.schema_hash());
  for (int v = 0; v < tensor.nodes(); ++v) {
    const int src = node_map[static_cast<std::size_t>(v)];
    if (src < 0 || src >= nodes_) throw ValidationError("node map entry out of range");
    for (int t = 0; t < tensor.minutes(); ++t) {
      auto raw = tensor.step(v, t);
      auto tok = out.step(v, t);
      for (int f = 0; f < features_; ++f) {
        tok[static_cast<std::size_t>(f)] =
            static_cast<std::uint8_t>(discretize_value(raw[static_cast<std::size_t>(f)], cutoffs(src, f)));
      }
    }
  }
  return out;
}

std::vector<int> Discretizer::map_unseen(const RawTensor& tensor) const {
  std::vector<int> map;
  map.reserve(static_cast<std::size_t>(tensor.nodes()));
  for (int v = 0; v < tensor.nodes(); ++v) {
    map.push_back(nearest_training_node(summarize_node(tensor, v), summaries_));
  }
  return map;
}

json Discretizer::to_json() const {
  json doc;
  doc["kind"] = "discretizer";
  doc["N"] = bins_;
  doc["schema_hash"] = schema_hash_;
  doc["nodes"] = nodes_;
  doc["features"] = features_;
  json cut = json::array();
  for (int v = 0; v < nodes_; ++v) {
    json per_node = json::array();
    for (int f = 0; f < features_; ++f) per_node.push_back(cutoffs(v, f).cutoffs);
    cut.push_back(std::move(per_node));
  }
  doc["cutoffs"] = std::move(cut);
  json sums = json::array();
  for (const auto& s : summaries_) sums.push_back(std::vector<double>(s.begin(), s.end()));
  doc["node_summaries"] = std::move(sums);
  return doc;
}

Discretizer Discretizer::from_json(const json& doc) {
  if (doc.value("kind", std::string{}) != "discretizer") throw ValidationError("not a discretizer document");
  Discretizer d;
  d.bins_ = doc.at("N").get<int>();
  d.schema_hash_ = doc.at("schema_hash").get<std::string>();
  d.nodes_ = doc.at("nodes").get<int>();
  d.features_ = doc.at("features").get<int>();
  for (const auto& per_node : doc.at("cutoffs")) {
    for (const auto& c : per_node) d.cutoffs_.push_back(BinCutoffs{c.get<std::vector<double>>()});
  }
  for (const auto& s : doc.at("node_summaries")) {
    auto v = s.get<std::vector<double>>();
    if (v.size() != 5) throw ValidationError("node summary must have 5 entries");
    d.summaries_.push_back({v[0], v[1], v[2], v[3], v[4]});
  }
  if (d.cutoffs_.size() != static_cast<std::size_t>(d.nodes_) * static_cast<std::size_t>(d.features_) ||
      d.summaries_.size() != static_cast<std::size_t>(d.nodes_)) {
    throw ValidationError("discretizer document is inconsistent with its dimensions");
  }
  return d;
}

}  // namespace nfgen
