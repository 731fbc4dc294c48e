#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <vector>

#include "nfgen/model.hpp"
#include "nfgen/seed.hpp"
#include "nfgen/tensor.hpp"

namespace nfgen {

struct TrainConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int max_epochs = 100;
  int batch_size = 16;
  int patience = 10;
  double clip_norm = 1.0;
  int unit_len = 512;
  /// 0 means every batch of the epoch.
  int max_batches_per_epoch = 0;
  /// 0 means std::thread::hardware_concurrency().
  int threads = 0;
  double init_stddev = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
  json to_json() const;
  static TrainConfig from_json(const json& doc);
};

/// Minutes [begin, begin + length) of one node, relative to a tensor.
struct SequenceRef {
  int node = 0;
  int begin = 0;
  int length = 0;

  friend bool operator==(const SequenceRef&, const SequenceRef&) = default;
};

using Batch = std::vector<SequenceRef>;

/// Cuts minutes [begin, end) of every node into consecutive units of
/// `unit_len`; a shorter tail unit keeps its natural length.
std::vector<SequenceRef> make_units(int nodes, int begin, int end, int unit_len);

/// One epoch: a seeded permutation of `units` grouped into batches.
std::vector<Batch> make_batches(std::span<const SequenceRef> units, int batch_size, std::uint64_t seed);
std::vector<Batch> make_batches(const TokenTensor& tokens, int unit_len, int batch_size, std::uint64_t seed);

/// Token tensor plus the node -> customer map used for embedding lookups.
class TokenDataset {
 public:
  TokenDataset(const TokenTensor& tokens, std::vector<int> customers);

  const TokenTensor& tokens() const noexcept { return *tokens_; }
  int customer_of(int node) const { return customers_.at(static_cast<std::size_t>(node)); }
  SequenceView view(const SequenceRef& r) const;

 private:
  const TokenTensor* tokens_;
  std::vector<int> customers_;
};

/// Adam with bias correction.
class Adam {
 public:
  Adam(std::size_t size, double lr, double beta1, double beta2, double eps);

  void step(Model::Vec& params, const Model::Vec& grad);
  std::int64_t steps() const noexcept { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  Model::Vec m_, v_;
};

/// Scales `grad` in place so its L2 norm is at most `max_norm`; returns the
/// norm before clipping.
double clip_global_norm(Model::Vec& grad, double max_norm);

/// Mean-normalized loss and gradient of one batch, computed over `threads`
/// workers. Each sequence's dropout stream depends only on
/// (seed, index in batch), so results do not depend on the thread count
/// beyond floating-point reassociation.
template <typename S>
LossSum batch_gradient(const Transformer<S>& model, const TokenDataset& data, const Batch& batch, Mode mode,
                       std::uint64_t seed, int threads, typename Transformer<S>::Vec& grad);

struct Metrics {
  double loss = 0.0;
  double ppl = 1.0;
  double accuracy = 0.0;

  static Metrics from(const LossSum& s);
  json to_json() const;
};

/// Loss, perplexity and accuracy over every unit of `data` (eval mode).
Metrics evaluate(const Model& model, const TokenDataset& data, int unit_len, int threads = 0);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_ppl = 0.0;
  double val_acc = 0.0;
  double wall_s = 0.0;

  json to_json() const;
};

struct PretrainResult {
  Model best;
  Metrics best_val;
  int best_epoch = 0;
  std::int64_t steps = 0;
  std::vector<EpochLog> history;
};

/// Trains from a fresh initialization and returns the parameters with the
/// best validation loss. One JSON object per epoch is written to `log`.
PretrainResult pretrain(const TokenDataset& train, const TokenDataset& val, const ModelConfig& model_cfg,
                        const TrainConfig& cfg, std::ostream* log = nullptr);

/// Continues training `init` (used for reproducibility and zero-lr checks).
PretrainResult pretrain_from(Model init, const TokenDataset& train, const TokenDataset& val, const TrainConfig& cfg,
                             std::ostream* log = nullptr);

/// Per-(node, feature) first-order transition model with add-one smoothing.
class BigramModel {
 public:
  BigramModel() = default;

  /// Counts every consecutive pair within each node's series, plus the
  /// unconditional category counts used for the first step of a unit.
  static BigramModel fit(const TokenTensor& tokens, int bins);

  int bins() const noexcept { return bins_; }
  std::uint64_t transition_count(int node, int feature, int prev, int cur) const;
  std::uint64_t first_count(int node, int feature, int cur) const;

  /// p(cur | prev); prev < 0 selects the unconditional distribution.
  double probability(int node, int feature, int prev, int cur) const;
  /// Most probable category given prev; ties go to the lowest category.
  int predict(int node, int feature, int prev) const;

  /// Same normalization and unit segmentation as the model's evaluation.
  Metrics evaluate(const TokenTensor& tokens, int unit_len) const;

 private:
  std::size_t row(int node, int feature, int prev) const noexcept;

  int nodes_ = 0;
  int features_ = 0;
  int bins_ = 0;
  // [node][feature][prev in 0..bins, where bins = unconditional][cur]
  std::vector<std::uint64_t> counts_;
  std::vector<std::uint64_t> row_totals_;
};

}  // namespace nfgen
