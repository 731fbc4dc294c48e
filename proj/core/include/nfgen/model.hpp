#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nfgen/artifact.hpp"

namespace nfgen {

inline constexpr int kMinuteSlots = 60;
inline constexpr int kHourSlots = 24;
inline constexpr int kWeekdaySlots = 7;
inline constexpr int kTimeSlots = kMinuteSlots + kHourSlots + kWeekdaySlots;

/// Calendar position of a minute (UTC). Weekday 0 is Monday.
struct TimeFeatures {
  std::uint8_t minute = 0;
  std::uint8_t hour = 0;
  std::uint8_t weekday = 0;

  static TimeFeatures at_epoch_minute(std::int64_t epoch_minute) noexcept;
  friend bool operator==(const TimeFeatures&, const TimeFeatures&) = default;
};

struct ModelConfig {
  int layers = 4;
  int heads = 4;
  int hidden = 128;
  int ff = 512;
  int max_len = 512;
  int features = 86;
  int bins = 10;
  int nodes = 1;
  int customers = 1;
  double dropout = 0.3;

  int head_dim() const noexcept { return hidden / heads; }
  /// Width of the one-hot input: every feature's bins plus the time slots.
  int input_width() const noexcept { return features * bins + kTimeSlots; }
  int output_width() const noexcept { return features * bins; }

  void validate() const;
  json to_json() const;
  static ModelConfig from_json(const json& doc);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// One minute of input for a node.
struct StepInput {
  std::span<const std::uint8_t> tokens;
  TimeFeatures time;
  int node = 0;
  int customer = 0;
};

/// A contiguous run of minutes for one node; tokens are minute-major.
struct SequenceView {
  int node = 0;
  int customer = 0;
  std::int64_t start_minute = 0;
  int length = 0;
  std::span<const std::uint8_t> tokens;

  std::span<const std::uint8_t> step(int t) const noexcept {
    const auto f = tokens.size() / static_cast<std::size_t>(length);
    return tokens.subspan(static_cast<std::size_t>(t) * f, f);
  }
  SequenceView prefix(int n) const noexcept {
    SequenceView s = *this;
    s.length = n;
    s.tokens = tokens.first(static_cast<std::size_t>(n) * (tokens.size() / static_cast<std::size_t>(length)));
    return s;
  }
};

struct TensorSlot {
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;

  std::size_t size() const noexcept { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

struct BlockSlots {
  TensorSlot ln1_gain, ln1_bias;
  TensorSlot qkv_weight, qkv_bias;
  TensorSlot attn_out_weight, attn_out_bias;
  TensorSlot ln2_gain, ln2_bias;
  TensorSlot fc1_weight, fc1_bias;
  TensorSlot fc2_weight, fc2_bias;
};

/// Named parameter tensors packed into one flat vector. Weight matrices are
/// stored input-major (rows = fan-in) so activations multiply on the left.
class ParamLayout {
 public:
  struct Named {
    std::string name;
    TensorSlot slot;
  };

  explicit ParamLayout(const ModelConfig& cfg);

  TensorSlot input_proj;    // input_width x hidden
  TensorSlot node_emb;      // nodes x hidden
  TensorSlot customer_emb;  // customers x hidden
  TensorSlot pos_emb;       // (max_len + 1) x hidden, row 0 is the begin-of-sequence slot
  TensorSlot bos;           // 1 x hidden
  std::vector<BlockSlots> blocks;
  TensorSlot final_gain, final_bias;
  TensorSlot head_weight;  // hidden x output_width
  TensorSlot head_bias;

  const std::vector<Named>& tensors() const noexcept { return named_; }
  const Named& find(const std::string& name) const;
  std::size_t total() const noexcept { return total_; }

 private:
  TensorSlot add(std::string name, int rows, int cols);

  std::vector<Named> named_;
  std::size_t total_ = 0;
};

enum class Mode { train, eval };

/// Negative log-likelihood totals over (step, feature) targets.
struct LossSum {
  double nll = 0.0;
  std::int64_t count = 0;
  std::int64_t correct = 0;

  LossSum& operator+=(const LossSum& o) noexcept {
    nll += o.nll;
    count += o.count;
    correct += o.correct;
    return *this;
  }
};

/// Pre-LN causal Transformer decoder over per-minute traffic tokens.
///
/// Each minute is embedded as a linear projection of its one-hot feature
/// tokens and time slots, plus node, customer and learned position
/// embeddings. A learned begin-of-sequence step precedes the first minute so
/// every minute of a sequence is a prediction target. The head emits
/// `features x bins` logits per position.
template <typename S>
class Transformer {
 public:
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
  using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;
  using MatMap = Eigen::Map<Mat>;
  using ConstMatMap = Eigen::Map<const Mat>;

  struct ForwardResult {
    Mat logits;        // T x output_width; row t predicts minute t + 1
    Mat hidden;        // T x hidden; final-layer (post norm) states
    RowVec bos_logits; // prediction for the first minute
  };

  /// All parameters zero; call init_random() for training.
  explicit Transformer(ModelConfig cfg);

  void init_random(std::uint64_t seed, double stddev = 0.02);

  const ModelConfig& config() const noexcept { return cfg_; }
  const ParamLayout& layout() const noexcept { return layout_; }
  Vec& params() noexcept { return params_; }
  const Vec& params() const noexcept { return params_; }
  std::size_t parameter_count() const noexcept { return layout_.total(); }

  MatMap view(const TensorSlot& s) { return MatMap(params_.data() + s.offset, s.rows, s.cols); }
  ConstMatMap view(const TensorSlot& s) const { return ConstMatMap(params_.data() + s.offset, s.rows, s.cols); }

  /// Projection of the one-hot step encoding plus node and customer embeddings.
  RowVec embed_step(const StepInput& in) const;

  ForwardResult forward(const SequenceView& seq, Mode mode = Mode::eval, std::uint64_t dropout_seed = 0) const;

  /// T x hidden final-layer states in eval mode.
  Mat hidden_states(const SequenceView& seq) const;

  /// Scores every minute of `seq` as a target (the first from the
  /// begin-of-sequence step). When `grad` is given, adds
  /// `grad_scale * d(sum nll)/d(params)` into it.
  LossSum sequence_loss(const SequenceView& seq, Mode mode, std::uint64_t dropout_seed = 0, Vec* grad = nullptr,
                        S grad_scale = S(1)) const;

  template <typename T>
  Transformer<T> cast() const {
    Transformer<T> out(cfg_);
    out.params() = params_.template cast<T>();
    return out;
  }

 private:
  struct Cache;

  void run(const SequenceView& seq, int steps, Mode mode, std::uint64_t dropout_seed, Cache& c) const;
  void backward(const SequenceView& seq, int steps, const Cache& c, const Mat& dlogits, Vec& grad) const;
  void check_sequence(const SequenceView& seq, int steps) const;

  ModelConfig cfg_;
  ParamLayout layout_;
  Vec params_;
};

extern template class Transformer<float>;
extern template class Transformer<double>;

using Model = Transformer<float>;

}  // namespace nfgen
