#include "nfgen/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include "nfgen/error.hpp"

namespace nfgen {

namespace {

int resolve_threads(int requested, std::size_t work_items) {
  int n = requested > 0 ? requested : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return std::max(1, std::min<int>(n, static_cast<int>(std::max<std::size_t>(1, work_items))));
}

// Runs fn(worker, begin, end) over contiguous chunks of [0, n).
template <typename Fn>
void parallel_chunks(std::size_t n, int workers, Fn&& fn) {
  if (workers <= 1) {
    fn(0, std::size_t{0}, n);
    return;
  }
  std::vector<std::jthread> pool;
  const std::size_t chunk = (n + static_cast<std::size_t>(workers) - 1) / static_cast<std::size_t>(workers);
  for (int w = 0; w < workers; ++w) {
    const std::size_t b = std::min(n, static_cast<std::size_t>(w) * chunk);
    const std::size_t e = std::min(n, b + chunk);
    pool.emplace_back([&fn, w, b, e] { fn(w, b, e); });
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ValidationError("learning rate must be >= 0");
  if (patience < 1) throw ValidationError("patience must be >= 1");
  if (batch_size < 1) throw ValidationError("batch size must be >= 1");
  if (max_epochs < 0) throw ValidationError("max epochs must be >= 0");
  if (unit_len < 2) throw ValidationError("unit length must be >= 2");
}

json TrainConfig::to_json() const {
  return json{{"learning_rate", learning_rate},
              {"beta1", beta1},
              {"beta2", beta2},
              {"epsilon", epsilon},
              {"max_epochs", max_epochs},
              {"batch_size", batch_size},
              {"patience", patience},
              {"clip_norm", clip_norm},
              {"unit_len", unit_len},
              {"max_batches_per_epoch", max_batches_per_epoch},
              {"threads", threads},
              {"init_stddev", init_stddev},
              {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& doc) {
  TrainConfig c;
  c.learning_rate = doc.value("learning_rate", c.learning_rate);
  c.beta1 = doc.value("beta1", c.beta1);
  c.beta2 = doc.value("beta2", c.beta2);
  c.epsilon = doc.value("epsilon", c.epsilon);
  c.max_epochs = doc.value("max_epochs", c.max_epochs);
  c.batch_size = doc.value("batch_size", c.batch_size);
  c.patience = doc.value("patience", c.patience);
  c.clip_norm = doc.value("clip_norm", c.clip_norm);
  c.unit_len = doc.value("unit_len", c.unit_len);
  c.max_batches_per_epoch = doc.value("max_batches_per_epoch", c.max_batches_per_epoch);
  c.threads = doc.value("threads", c.threads);
  c.init_stddev = doc.value("init_stddev", c.init_stddev);
  c.seed = doc.value("seed", c.seed);
  return c;
}

std::vector<SequenceRef> make_units(int nodes, int begin, int end, int unit_len) {
  if (unit_len < 1) throw ValidationError("unit length must be >= 1");
  std::vector<SequenceRef> units;
  for (int v = 0; v < nodes; ++v) {
    for (int t = begin; t < end; t += unit_len) units.push_back({v, t, std::min(unit_len, end - t)});
  }
  return units;
}

std::vector<Batch> make_batches(std::span<const SequenceRef> units, int batch_size, std::uint64_t seed) {
  if (batch_size < 1) throw ValidationError("batch size must be >= 1");
  std::vector<std::size_t> order(units.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Batch> batches;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    Batch b;
    for (std::size_t j = i; j < std::min(order.size(), i + static_cast<std::size_t>(batch_size)); ++j) {
      b.push_back(units[order[j]]);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

std::vector<Batch> make_batches(const TokenTensor& tokens, int unit_len, int batch_size, std::uint64_t seed) {
  auto units = make_units(tokens.nodes(), 0, tokens.minutes(), unit_len);
  return make_batches(units, batch_size, seed);
}

TokenDataset::TokenDataset(const TokenTensor& tokens, std::vector<int> customers)
    : tokens_(&tokens), customers_(std::move(customers)) {
  if (static_cast<int>(customers_.size()) != tokens.nodes()) {
    throw ValidationError("customer map must have one entry per node");
  }
}

SequenceView TokenDataset::view(const SequenceRef& r) const {
  if (r.begin < 0 || r.length < 1 || r.begin + r.length > tokens_->minutes()) {
    throw ValidationError("sequence reference outside the token tensor");
  }
  SequenceView s;
  s.node = r.node;
  s.customer = customer_of(r.node);
  s.start_minute = tokens_->start_minute() + r.begin;
  s.length = r.length;
  s.tokens = tokens_->window(r.node, r.begin, r.length);
  return s;
}

Adam::Adam(std::size_t size, double lr, double beta1, double beta2, double eps)
    : lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      m_(Model::Vec::Zero(static_cast<Eigen::Index>(size))),
      v_(Model::Vec::Zero(static_cast<Eigen::Index>(size))) {}

void Adam::step(Model::Vec& params, const Model::Vec& grad) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const float b1 = static_cast<float>(beta1_);
  const float b2 = static_cast<float>(beta2_);
  m_ = b1 * m_ + (1.0f - b1) * grad;
  v_ = b2 * v_ + (1.0f - b2) * grad.cwiseProduct(grad);
  const float step = static_cast<float>(lr_ / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float eps = static_cast<float>(eps_);
  params.array() -= step * m_.array() / ((v_.array() * inv_c2).sqrt() + eps);
}

double clip_global_norm(Model::Vec& grad, double max_norm) {
  const double norm = static_cast<double>(grad.template cast<double>().norm());
  if (max_norm > 0.0 && norm > max_norm) grad *= static_cast<float>(max_norm / norm);
  return norm;
}

template <typename S>
LossSum batch_gradient(const Transformer<S>& model, const TokenDataset& data, const Batch& batch, Mode mode,
                       std::uint64_t seed, int threads, typename Transformer<S>::Vec& grad) {
  using Vec = typename Transformer<S>::Vec;
  std::int64_t targets = 0;
  for (const auto& r : batch) targets += static_cast<std::int64_t>(r.length) * model.config().features;
  const S scale = targets > 0 ? S(1) / static_cast<S>(targets) : S(0);

  const int workers = resolve_threads(threads, batch.size());
  std::vector<Vec> partial(static_cast<std::size_t>(workers));
  std::vector<LossSum> sums(static_cast<std::size_t>(workers));
  parallel_chunks(batch.size(), workers, [&](int w, std::size_t b, std::size_t e) {
    auto& g = partial[static_cast<std::size_t>(w)];
    g = Vec::Zero(model.params().size());
    for (std::size_t i = b; i < e; ++i) {
      sums[static_cast<std::size_t>(w)] +=
          model.sequence_loss(data.view(batch[i]), mode, mix_seed(seed, i), &g, scale);
    }
  });
  grad = Vec::Zero(model.params().size());
  LossSum total;
  for (int w = 0; w < workers; ++w) {
    grad += partial[static_cast<std::size_t>(w)];
    total += sums[static_cast<std::size_t>(w)];
  }
  return total;
}

template LossSum batch_gradient<float>(const Transformer<float>&, const TokenDataset&, const Batch&, Mode,
                                       std::uint64_t, int, Transformer<float>::Vec&);
template LossSum batch_gradient<double>(const Transformer<double>&, const TokenDataset&, const Batch&, Mode,
                                        std::uint64_t, int, Transformer<double>::Vec&);

Metrics Metrics::from(const LossSum& s) {
  Metrics m;
  if (s.count > 0) {
    m.loss = s.nll / static_cast<double>(s.count);
    m.accuracy = static_cast<double>(s.correct) / static_cast<double>(s.count);
  }
  m.ppl = std::exp(m.loss);
  return m;
}

json Metrics::to_json() const { return json{{"loss", loss}, {"ppl", ppl}, {"accuracy", accuracy}}; }

Metrics evaluate(const Model& model, const TokenDataset& data, int unit_len, int threads) {
  if (data.tokens().features() != model.config().features) {
    throw SchemaMismatch("token tensor feature count differs from the model's");
  }
  auto units = make_units(data.tokens().nodes(), 0, data.tokens().minutes(), unit_len);
  const int workers = resolve_threads(threads, units.size());
  std::vector<LossSum> sums(static_cast<std::size_t>(workers));
  parallel_chunks(units.size(), workers, [&](int w, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) sums[static_cast<std::size_t>(w)] += model.sequence_loss(data.view(units[i]), Mode::eval);
  });
  LossSum total;
  for (const auto& s : sums) total += s;
  return Metrics::from(total);
}

json EpochLog::to_json() const {
  return json{{"epoch", epoch},     {"train_loss", train_loss}, {"val_loss", val_loss},
              {"val_ppl", val_ppl}, {"val_acc", val_acc},       {"wall_s", wall_s}};
}

PretrainResult pretrain(const TokenDataset& train, const TokenDataset& val, const ModelConfig& model_cfg,
                        const TrainConfig& cfg, std::ostream* log) {
  Model model(model_cfg);
  model.init_random(mix_seed(cfg.seed, 1), cfg.init_stddev);
  return pretrain_from(std::move(model), train, val, cfg, log);
}

PretrainResult pretrain_from(Model model, const TokenDataset& train, const TokenDataset& val, const TrainConfig& cfg,
                             std::ostream* log) {
  cfg.validate();
  if (train.tokens().schema_hash() != val.tokens().schema_hash()) {
    throw SchemaMismatch("training and validation tensors use different schemas");
  }
  const auto units = make_units(train.tokens().nodes(), 0, train.tokens().minutes(), cfg.unit_len);
  Adam adam(model.parameter_count(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
  Model::Vec grad;

  PretrainResult result{model, {}, 0, 0, {}};
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    auto batches = make_batches(units, cfg.batch_size, mix_seed(cfg.seed, 2, static_cast<std::uint64_t>(epoch)));
    if (cfg.max_batches_per_epoch > 0 && batches.size() > static_cast<std::size_t>(cfg.max_batches_per_epoch)) {
      batches.resize(static_cast<std::size_t>(cfg.max_batches_per_epoch));
    }
    LossSum epoch_sum;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      auto s = batch_gradient(model, train, batches[b], Mode::train,
                              mix_seed(cfg.seed, 3, static_cast<std::uint64_t>(epoch), b), cfg.threads, grad);
      if (!std::isfinite(s.nll) || !grad.allFinite()) {
        throw Error("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                    " (nll sum " + std::to_string(s.nll) + ")");
      }
      clip_global_norm(grad, cfg.clip_norm);
      adam.step(model.params(), grad);
      epoch_sum += s;
    }
    const Metrics train_m = Metrics::from(epoch_sum);
    const Metrics val_m = evaluate(model, val, cfg.unit_len, cfg.threads);
    if (!std::isfinite(val_m.loss)) throw Error("non-finite validation loss at epoch " + std::to_string(epoch));

    EpochLog entry{epoch,     train_m.loss, val_m.loss, val_m.ppl, val_m.accuracy,
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
    result.history.push_back(entry);
    if (log) *log << entry.to_json().dump() << '\n' << std::flush;

    if (val_m.loss < best_loss) {
      best_loss = val_m.loss;
      result.best = model;
      result.best_val = val_m;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  if (result.best_epoch == 0) result.best_val = evaluate(model, val, cfg.unit_len, cfg.threads);
  result.steps = adam.steps();
  return result;
}

// ---------------------------------------------------------------------------

std::size_t BigramModel::row(int node, int feature, int prev) const noexcept {
  const auto rows_per_feature = static_cast<std::size_t>(bins_ + 1);
  return ((static_cast<std::size_t>(node) * static_cast<std::size_t>(features_) + static_cast<std::size_t>(feature)) *
              rows_per_feature +
          static_cast<std::size_t>(prev < 0 ? bins_ : prev));
}

BigramModel BigramModel::fit(const TokenTensor& tokens, int bins) {
  BigramModel m;
  m.nodes_ = tokens.nodes();
  m.features_ = tokens.features();
  m.bins_ = bins;
  const std::size_t rows = static_cast<std::size_t>(m.nodes_) * static_cast<std::size_t>(m.features_) *
                           static_cast<std::size_t>(bins + 1);
  m.counts_.assign(rows * static_cast<std::size_t>(bins), 0);
  m.row_totals_.assign(rows, 0);
  for (int v = 0; v < m.nodes_; ++v) {
    for (int t = 0; t < tokens.minutes(); ++t) {
      for (int f = 0; f < m.features_; ++f) {
        const int cur = tokens.at(v, t, f);
        if (cur >= bins) throw ValidationError("token outside the bin vocabulary");
        const std::size_t r0 = m.row(v, f, -1);
        ++m.counts_[r0 * static_cast<std::size_t>(bins) + static_cast<std::size_t>(cur)];
        ++m.row_totals_[r0];
        if (t > 0) {
          const std::size_t r = m.row(v, f, tokens.at(v, t - 1, f));
          ++m.counts_[r * static_cast<std::size_t>(bins) + static_cast<std::size_t>(cur)];
          ++m.row_totals_[r];
        }
      }
    }
  }
  return m;
}

std::uint64_t BigramModel::transition_count(int node, int feature, int prev, int cur) const {
  return counts_.at(row(node, feature, prev) * static_cast<std::size_t>(bins_) + static_cast<std::size_t>(cur));
}

std::uint64_t BigramModel::first_count(int node, int feature, int cur) const {
  return transition_count(node, feature, -1, cur);
}

double BigramModel::probability(int node, int feature, int prev, int cur) const {
  const std::size_t r = row(node, feature, prev);
  const auto num = counts_[r * static_cast<std::size_t>(bins_) + static_cast<std::size_t>(cur)] + 1;
  const auto den = row_totals_[r] + static_cast<std::uint64_t>(bins_);
  return static_cast<double>(num) / static_cast<double>(den);
}

int BigramModel::predict(int node, int feature, int prev) const {
  const std::size_t r = row(node, feature, prev) * static_cast<std::size_t>(bins_);
  int best = 0;
  for (int c = 1; c < bins_; ++c) {
    if (counts_[r + static_cast<std::size_t>(c)] > counts_[r + static_cast<std::size_t>(best)]) best = c;
  }
  return best;
}

Metrics BigramModel::evaluate(const TokenTensor& tokens, int unit_len) const {
  if (tokens.nodes() != nodes_ || tokens.features() != features_) {
    throw SchemaMismatch("bigram model shape does not match the evaluation tensor");
  }
  LossSum sum;
  for (const auto& u : make_units(tokens.nodes(), 0, tokens.minutes(), unit_len)) {
    for (int t = u.begin; t < u.begin + u.length; ++t) {
      for (int f = 0; f < features_; ++f) {
        const int prev = t == u.begin ? -1 : tokens.at(u.node, t - 1, f);
        const int cur = tokens.at(u.node, t, f);
        sum.nll -= std::log(probability(u.node, f, prev, cur));
        sum.correct += predict(u.node, f, prev) == cur ? 1 : 0;
        ++sum.count;
      }
    }
  }
  return Metrics::from(sum);
}

}  // namespace nfgen
