#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nfgen/artifact.hpp"
#include "nfgen/labels.hpp"
#include "nfgen/model.hpp"
#include "nfgen/schema.hpp"
#include "nfgen/tensor.hpp"

namespace nfgen {

// ---------------------------------------------------------------------------
// Onset labeling

struct CusumResult {
  std::optional<int> onset;
  double mu = 0.0;
  double sigma = 0.0;
  /// Reference deviation was zero and max(1, 0.01 mu) was used instead.
  bool sigma_substituted = false;
};

/// One-sided CUSUM on `series` with mean and population deviation taken from
/// `reference`: S_t = max(0, S_{t-1} + x_t - mu - kappa sigma), onset = first
/// t with S_t > h sigma. The reference needs at least 10 minutes.
CusumResult cusum_onset(std::span<const double> reference, std::span<const double> series, double kappa = 0.5,
                        double h = 5.0);

/// Feature whose volume an attack type inflates; in-bytes volume when the
/// schema lacks it (light schema).
int matching_feature(const FeatureSchema& schema, AttackType type);
/// Feature used for effectiveness and overhead (in-bytes volume).
int volume_feature(const FeatureSchema& schema);

// ---------------------------------------------------------------------------
// Examples

/// Tensor minutes [begin, end), relative to the tensor start.
struct MinuteRange {
  int begin = 0;
  int end = 0;
};

struct DetectionConfig {
  int window = 30;
  /// Minutes of preceding context fed to the backbone (clipped at the split).
  int history = 482;
  /// Minutes before the window used as the CUSUM reference.
  int reference = 60;
  double kappa = 0.5;
  double h = 5.0;
  /// Minimum normal minutes before an attack starts inside its window.
  int min_lead = 5;
  /// Percent.
  double overhead_cap = 0.1;
  /// Percent of customers that must stay within the cap.
  double customer_fraction = 80.0;
  int head_hidden = 512;
  double learning_rate = 1e-3;
  int epochs = 400;
  /// Decoupled L2 decay on the first-layer weights.
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  json to_json() const;
  static DetectionConfig from_json(const json& doc);
};

struct DetectionExample {
  int node = 0;
  int customer = 0;
  AttackType type = AttackType::none;
  int label = 0;
  /// Tensor-relative minute of the first window minute and of the context start.
  int window_begin = 0;
  int history_begin = 0;
  /// Per window minute: 1 anomalous, 0 normal.
  std::vector<std::uint8_t> marks;
  /// Per window minute: in-bytes volume.
  std::vector<double> volume;
  /// Window-relative onset (CUSUM) and exclusive attack end, attacks only.
  std::optional<int> onset;
  std::optional<int> end;
  /// Window-relative injected start from the label file.
  std::optional<int> labeled_start;
  bool cusum_found = false;

  int window() const noexcept { return static_cast<int>(marks.size()); }
  int context_length() const noexcept { return window_begin - history_begin + window(); }
};

struct ExampleSet {
  std::vector<DetectionExample> examples;
  std::vector<std::string> warnings;
};

/// One attack window per label starting inside `split` and one seeded
/// non-attack window from the same node and split. Windows, context and the
/// CUSUM reference never leave the split.
ExampleSet build_examples(const RawTensor& raw, const FeatureSchema& schema, std::span<const AttackLabel> labels,
                          std::span<const int> customers, MinuteRange split, const DetectionConfig& cfg);

/// Context tokens of an example: history followed by the window.
SequenceView example_sequence(const TokenTensor& tokens, const DetectionExample& ex);

/// Final-layer states of the window minutes, one W x d matrix per example.
std::vector<Eigen::MatrixXd> encode_examples(const Model& backbone, const TokenTensor& tokens,
                                             std::span<const DetectionExample> examples);

// ---------------------------------------------------------------------------
// Survival head

/// Per-minute hazard lambda_t = logistic(w2 . relu(W1^T h_t + b1) + b2).
class SurvivalHead {
 public:
  SurvivalHead() = default;
  SurvivalHead(int input, int hidden);

  void init_random(std::uint64_t seed, double prior = 0.05);

  int input() const noexcept { return input_; }
  int hidden() const noexcept { return hidden_; }
  std::size_t parameter_count() const noexcept { return static_cast<std::size_t>(params_.size()); }
  Eigen::VectorXd& params() noexcept { return params_; }
  const Eigen::VectorXd& params() const noexcept { return params_; }

  Eigen::VectorXd hazards(const Eigen::MatrixXd& states) const;
  /// s_t = prod_{i <= t} (1 - lambda_i).
  std::vector<double> survival(const Eigen::MatrixXd& states) const;

  /// Mean per-minute binary cross-entropy over all examples; adds the
  /// gradient into `grad` when given.
  double loss(std::span<const Eigen::MatrixXd> states, std::span<const DetectionExample> examples,
              Eigen::VectorXd* grad = nullptr) const;

  json to_json() const;
  static SurvivalHead from_json(const json& doc);

 private:
  int input_ = 0;
  int hidden_ = 0;
  // W1 (input x hidden, row-major), b1 (hidden), w2 (hidden), b2.
  Eigen::VectorXd params_;
};

/// Survival curve from raw hazards.
std::vector<double> survival_from_hazards(std::span<const double> hazards);

struct FinetuneResult {
  SurvivalHead head;
  std::vector<double> loss_history;
};

/// Adam on the head only; the backbone states are precomputed.
FinetuneResult finetune(std::span<const Eigen::MatrixXd> states, std::span<const DetectionExample> examples,
                        const DetectionConfig& cfg);

// ---------------------------------------------------------------------------
// Detection and metrics

/// First 0-based index with s_t < tau.
std::optional<int> detect(std::span<const double> survival, double tau);

struct EffectOverhead {
  double effectiveness = 0.0;
  double overhead = 0.0;
};

EffectOverhead effectiveness_overhead(const DetectionExample& ex, std::optional<int> t_detect);

/// 0.01, 0.02, ..., 0.99.
std::vector<double> default_tau_grid();

struct GridPoint {
  double tau = 0.0;
  double mean_effectiveness = 0.0;
  /// Fraction of customers whose mean overhead exceeds the cap.
  double violating_fraction = 0.0;
  bool feasible = false;
};

std::vector<GridPoint> sweep_thresholds(std::span<const DetectionExample> examples,
                                        std::span<const std::vector<double>> curves, double overhead_cap,
                                        double customer_fraction, std::span<const double> grid);

/// Feasible tau with the highest mean effectiveness (ties to the larger tau);
/// without a feasible tau, the one with the fewest violating customers, ties
/// to the smaller tau.
GridPoint select_threshold(std::span<const DetectionExample> examples, std::span<const std::vector<double>> curves,
                           double overhead_cap, double customer_fraction,
                           std::span<const double> grid = default_tau_grid());

struct EvalReport {
  double tau = 0.0;
  int tp = 0, fp = 0, tn = 0, fn = 0;
  double effectiveness = 0.0;
  double overhead = 0.0;
  double fpr = 0.0;
  double fnr = 0.0;
  double f1 = 0.0;
  /// |t_d - t_a| for each true positive.
  std::vector<int> mitigation_times;
  double mitigation_mean = 0.0;
  double mitigation_median = 0.0;

  json to_json() const;
  std::string to_table() const;
};

EvalReport report(std::span<const DetectionExample> examples, std::span<const std::optional<int>> detections,
                  double tau);

}  // namespace nfgen
