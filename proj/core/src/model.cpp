#include "nfgen/model.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "nfgen/error.hpp"

namespace nfgen {

namespace {

constexpr double kLayerNormEps = 1e-5;

std::int64_t floor_mod(std::int64_t a, std::int64_t b) {
  std::int64_t r = a % b;
  return r < 0 ? r + b : r;
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) { return (a - floor_mod(a, b)) / b; }

template <typename S>
S gelu(S x) {
  const S c = S(0.7978845608028654);  // sqrt(2/pi)
  return S(0.5) * x * (S(1) + std::tanh(c * (x + S(0.044715) * x * x * x)));
}

template <typename S>
S gelu_grad(S x) {
  const S c = S(0.7978845608028654);
  const S u = c * (x + S(0.044715) * x * x * x);
  const S th = std::tanh(u);
  return S(0.5) * (S(1) + th) + S(0.5) * x * (S(1) - th * th) * c * (S(1) + S(3) * S(0.044715) * x * x);
}

template <typename Mat, typename Vec, typename Row>
void layer_norm(const Mat& x, const Row& gain, const Row& bias, Mat& xhat, Vec& rstd, Mat& y) {
  using S = typename Mat::Scalar;
  const auto rows = x.rows();
  const auto d = x.cols();
  xhat.resize(rows, d);
  y.resize(rows, d);
  rstd.resize(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const S mean = x.row(r).mean();
    const S var = (x.row(r).array() - mean).square().mean();
    const S rs = S(1) / std::sqrt(var + S(kLayerNormEps));
    rstd(r) = rs;
    xhat.row(r) = (x.row(r).array() - mean) * rs;
    y.row(r) = xhat.row(r).cwiseProduct(gain) + bias;
  }
}

// Adds dL/dx into dx; accumulates gain/bias gradients.
template <typename Mat, typename Vec, typename Row, typename RowMap>
void layer_norm_backward(const Mat& dy, const Mat& xhat, const Vec& rstd, const Row& gain, RowMap dgain,
                         RowMap dbias, Mat& dx) {
  using S = typename Mat::Scalar;
  const auto d = static_cast<S>(dy.cols());
  dgain += dy.cwiseProduct(xhat).colwise().sum();
  dbias += dy.colwise().sum();
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    auto dxhat = dy.row(r).cwiseProduct(gain);
    const S m1 = dxhat.sum() / d;
    const S m2 = dxhat.cwiseProduct(xhat.row(r)).sum() / d;
    dx.row(r).array() += rstd(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2);
  }
}

template <typename Mat>
void make_dropout_mask(std::mt19937_64& rng, double p, Eigen::Index rows, Eigen::Index cols, Mat& mask) {
  using S = typename Mat::Scalar;
  mask.resize(rows, cols);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const S keep = S(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = u(rng) >= p ? keep : S(0);
}

}  // namespace

TimeFeatures TimeFeatures::at_epoch_minute(std::int64_t m) noexcept {
  TimeFeatures tf;
  tf.minute = static_cast<std::uint8_t>(floor_mod(m, 60));
  tf.hour = static_cast<std::uint8_t>(floor_mod(floor_div(m, 60), 24));
  // 1970-01-01 was a Thursday.
  tf.weekday = static_cast<std::uint8_t>(floor_mod(floor_div(m, 1440) + 3, 7));
  return tf;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ValidationError("model config: " + what); };
  if (layers < 1) fail("layers must be >= 1");
  if (heads < 1) fail("heads must be >= 1");
  if (hidden < 1 || hidden % heads != 0) fail("hidden size must be a positive multiple of heads");
  if (ff < 1) fail("ff must be >= 1");
  if (max_len < 1) fail("max_len must be >= 1");
  if (features < 1) fail("features must be >= 1");
  if (bins < 2 || bins > 255) fail("bins must be in [2, 255]");
  if (nodes < 1) fail("nodes must be >= 1");
  if (customers < 1) fail("customers must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
}

json ModelConfig::to_json() const {
  return json{{"layers", layers}, {"heads", heads},       {"hidden", hidden},       {"ff", ff},
              {"max_len", max_len}, {"features", features}, {"bins", bins},           {"nodes", nodes},
              {"customers", customers}, {"dropout", dropout}};
}

ModelConfig ModelConfig::from_json(const json& doc) {
  ModelConfig c;
  c.layers = doc.value("layers", c.layers);
  c.heads = doc.value("heads", c.heads);
  c.hidden = doc.value("hidden", c.hidden);
  c.ff = doc.value("ff", c.ff);
  c.max_len = doc.value("max_len", c.max_len);
  c.features = doc.value("features", c.features);
  c.bins = doc.value("bins", c.bins);
  c.nodes = doc.value("nodes", c.nodes);
  c.customers = doc.value("customers", c.customers);
  c.dropout = doc.value("dropout", c.dropout);
  return c;
}

ParamLayout::ParamLayout(const ModelConfig& cfg) {
  cfg.validate();
  const int d = cfg.hidden;
  input_proj = add("input_proj", cfg.input_width(), d);
  node_emb = add("node_emb", cfg.nodes, d);
  customer_emb = add("customer_emb", cfg.customers, d);
  pos_emb = add("pos_emb", cfg.max_len + 1, d);
  bos = add("bos", 1, d);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    BlockSlots b;
    b.ln1_gain = add(p + "ln1.gain", 1, d);
    b.ln1_bias = add(p + "ln1.bias", 1, d);
    b.qkv_weight = add(p + "attn.qkv.weight", d, 3 * d);
    b.qkv_bias = add(p + "attn.qkv.bias", 1, 3 * d);
    b.attn_out_weight = add(p + "attn.out.weight", d, d);
    b.attn_out_bias = add(p + "attn.out.bias", 1, d);
    b.ln2_gain = add(p + "ln2.gain", 1, d);
    b.ln2_bias = add(p + "ln2.bias", 1, d);
    b.fc1_weight = add(p + "ffn.fc1.weight", d, cfg.ff);
    b.fc1_bias = add(p + "ffn.fc1.bias", 1, cfg.ff);
    b.fc2_weight = add(p + "ffn.fc2.weight", cfg.ff, d);
    b.fc2_bias = add(p + "ffn.fc2.bias", 1, d);
    blocks.push_back(b);
  }
  final_gain = add("final_norm.gain", 1, d);
  final_bias = add("final_norm.bias", 1, d);
  head_weight = add("head.weight", d, cfg.output_width());
  head_bias = add("head.bias", 1, cfg.output_width());
}

TensorSlot ParamLayout::add(std::string name, int rows, int cols) {
  TensorSlot s{total_, rows, cols};
  total_ += s.size();
  named_.push_back({std::move(name), s});
  return s;
}

const ParamLayout::Named& ParamLayout::find(const std::string& name) const {
  for (const auto& n : named_) {
    if (n.name == name) return n;
  }
  throw ValidationError("no parameter tensor named " + name);
}

// ---------------------------------------------------------------------------

template <typename S>
struct Transformer<S>::Cache {
  struct Block {
    Mat xhat1, a, qkv, ctx, y_mask, xhat2, b, h1, g, f_mask;
    Vec rstd1, rstd2;
    std::vector<Mat> probs;
  };
  Mat x0_mask;
  std::vector<Block> blocks;
  Mat xhatf, z, logits;
  Vec rstdf;
};

template <typename S>
Transformer<S>::Transformer(ModelConfig cfg)
    : cfg_(cfg), layout_(cfg_), params_(Vec::Zero(static_cast<Eigen::Index>(layout_.total()))) {}

template <typename S>
void Transformer<S>::init_random(std::uint64_t seed, double stddev) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, stddev);
  params_.setZero();
  for (const auto& n : layout_.tensors()) {
    const bool is_gain = n.name.ends_with(".gain");
    const bool is_bias = n.name.ends_with(".bias");
    auto m = view(n.slot);
    if (is_gain) {
      m.setOnes();
    } else if (!is_bias) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(normal(rng));
    }
  }
}

template <typename S>
typename Transformer<S>::RowVec Transformer<S>::embed_step(const StepInput& in) const {
  if (static_cast<int>(in.tokens.size()) != cfg_.features) throw ValidationError("step has wrong feature count");
  if (in.node < 0 || in.node >= cfg_.nodes) throw ValidationError("node index outside the embedding vocabulary");
  if (in.customer < 0 || in.customer >= cfg_.customers) {
    throw ValidationError("customer index outside the embedding vocabulary");
  }
  auto proj = view(layout_.input_proj);
  RowVec out = view(layout_.node_emb).row(in.node) + view(layout_.customer_emb).row(in.customer);
  const int fn = cfg_.output_width();
  for (int f = 0; f < cfg_.features; ++f) {
    const int tok = in.tokens[static_cast<std::size_t>(f)];
    if (tok >= cfg_.bins) throw ValidationError("token outside the bin vocabulary");
    out += proj.row(f * cfg_.bins + tok);
  }
  out += proj.row(fn + in.time.minute);
  out += proj.row(fn + kMinuteSlots + in.time.hour);
  out += proj.row(fn + kMinuteSlots + kHourSlots + in.time.weekday);
  return out;
}

template <typename S>
void Transformer<S>::check_sequence(const SequenceView& seq, int steps) const {
  if (seq.length < 1) throw ValidationError("empty sequence");
  if (steps > cfg_.max_len) {
    throw ValidationError("sequence of " + std::to_string(steps) + " steps exceeds max_len " +
                          std::to_string(cfg_.max_len));
  }
  if (seq.tokens.size() != static_cast<std::size_t>(seq.length) * static_cast<std::size_t>(cfg_.features)) {
    throw ValidationError("sequence token buffer does not match length x features");
  }
  if (seq.node < 0 || seq.node >= cfg_.nodes || seq.customer < 0 || seq.customer >= cfg_.customers) {
    throw ValidationError("node or customer index outside the embedding vocabulary");
  }
}

template <typename S>
void Transformer<S>::run(const SequenceView& seq, int steps, Mode mode, std::uint64_t dropout_seed,
                         Cache& c) const {
  const int d = cfg_.hidden;
  const int P = steps + 1;
  const int H = cfg_.heads;
  const int dh = cfg_.head_dim();
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  const bool drop = mode == Mode::train && cfg_.dropout > 0.0;
  std::mt19937_64 rng(dropout_seed);

  // Embeddings.
  Mat x(P, d);
  const RowVec meta = view(layout_.node_emb).row(seq.node) + view(layout_.customer_emb).row(seq.customer);
  auto pos = view(layout_.pos_emb);
  x.row(0) = view(layout_.bos).row(0) + meta + pos.row(0);
  for (int t = 0; t < steps; ++t) {
    StepInput in{seq.step(t), TimeFeatures::at_epoch_minute(seq.start_minute + t), seq.node, seq.customer};
    x.row(t + 1) = embed_step(in) + pos.row(t + 1);
  }
  if (drop) {
    make_dropout_mask(rng, cfg_.dropout, P, d, c.x0_mask);
    x.array() *= c.x0_mask.array();
  }

  c.blocks.resize(static_cast<std::size_t>(cfg_.layers));
  for (int l = 0; l < cfg_.layers; ++l) {
    const auto& bs = layout_.blocks[static_cast<std::size_t>(l)];
    auto& bc = c.blocks[static_cast<std::size_t>(l)];

    layer_norm(x, view(bs.ln1_gain), view(bs.ln1_bias), bc.xhat1, bc.rstd1, bc.a);
    bc.qkv.noalias() = bc.a * view(bs.qkv_weight);
    bc.qkv.rowwise() += view(bs.qkv_bias).row(0);
    bc.ctx.resize(P, d);
    bc.probs.resize(static_cast<std::size_t>(H));
    for (int h = 0; h < H; ++h) {
      auto q = bc.qkv.middleCols(h * dh, dh);
      auto k = bc.qkv.middleCols(d + h * dh, dh);
      auto v = bc.qkv.middleCols(2 * d + h * dh, dh);
      Mat& p = bc.probs[static_cast<std::size_t>(h)];
      p.noalias() = (q * k.transpose()) * scale;
      for (int i = 0; i < P; ++i) {
        auto row = p.row(i);
        const S mx = row.head(i + 1).maxCoeff();
        row.head(i + 1) = (row.head(i + 1).array() - mx).exp();
        row.head(i + 1) /= row.head(i + 1).sum();
        if (i + 1 < P) row.tail(P - i - 1).setZero();
      }
      bc.ctx.middleCols(h * dh, dh).noalias() = p * v;
    }
    Mat y = bc.ctx * view(bs.attn_out_weight);
    y.rowwise() += view(bs.attn_out_bias).row(0);
    if (drop) {
      make_dropout_mask(rng, cfg_.dropout, P, d, bc.y_mask);
      y.array() *= bc.y_mask.array();
    }
    x += y;

    layer_norm(x, view(bs.ln2_gain), view(bs.ln2_bias), bc.xhat2, bc.rstd2, bc.b);
    bc.h1.noalias() = bc.b * view(bs.fc1_weight);
    bc.h1.rowwise() += view(bs.fc1_bias).row(0);
    bc.g = bc.h1.unaryExpr([](S v) { return gelu(v); });
    Mat f = bc.g * view(bs.fc2_weight);
    f.rowwise() += view(bs.fc2_bias).row(0);
    if (drop) {
      make_dropout_mask(rng, cfg_.dropout, P, d, bc.f_mask);
      f.array() *= bc.f_mask.array();
    }
    x += f;
  }

  layer_norm(x, view(layout_.final_gain), view(layout_.final_bias), c.xhatf, c.rstdf, c.z);
  c.logits.noalias() = c.z * view(layout_.head_weight);
  c.logits.rowwise() += view(layout_.head_bias).row(0);
}

template <typename S>
void Transformer<S>::backward(const SequenceView& seq, int steps, const Cache& c, const Mat& dlogits,
                              Vec& grad) const {
  const int d = cfg_.hidden;
  const int P = steps + 1;
  const int H = cfg_.heads;
  const int dh = cfg_.head_dim();
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  auto g = [&grad](const TensorSlot& s) { return MatMap(grad.data() + s.offset, s.rows, s.cols); };
  auto grow = [&grad](const TensorSlot& s) {
    return Eigen::Map<RowVec>(grad.data() + s.offset, s.cols);
  };

  g(layout_.head_weight).noalias() += c.z.transpose() * dlogits;
  grow(layout_.head_bias) += dlogits.colwise().sum();
  Mat dz = dlogits * view(layout_.head_weight).transpose();
  Mat dx = Mat::Zero(P, d);
  layer_norm_backward(dz, c.xhatf, c.rstdf, view(layout_.final_gain).row(0), grow(layout_.final_gain),
                      grow(layout_.final_bias), dx);

  for (int l = cfg_.layers - 1; l >= 0; --l) {
    const auto& bs = layout_.blocks[static_cast<std::size_t>(l)];
    const auto& bc = c.blocks[static_cast<std::size_t>(l)];

    // Feed-forward branch.
    Mat df = dx;
    if (bc.f_mask.size() > 0) df.array() *= bc.f_mask.array();
    g(bs.fc2_weight).noalias() += bc.g.transpose() * df;
    grow(bs.fc2_bias) += df.colwise().sum();
    Mat dh1 = df * view(bs.fc2_weight).transpose();
    dh1.array() *= bc.h1.unaryExpr([](S v) { return gelu_grad(v); }).array();
    g(bs.fc1_weight).noalias() += bc.b.transpose() * dh1;
    grow(bs.fc1_bias) += dh1.colwise().sum();
    Mat db = dh1 * view(bs.fc1_weight).transpose();
    layer_norm_backward(db, bc.xhat2, bc.rstd2, view(bs.ln2_gain).row(0), grow(bs.ln2_gain), grow(bs.ln2_bias), dx);

    // Attention branch.
    Mat dy = dx;
    if (bc.y_mask.size() > 0) dy.array() *= bc.y_mask.array();
    g(bs.attn_out_weight).noalias() += bc.ctx.transpose() * dy;
    grow(bs.attn_out_bias) += dy.colwise().sum();
    Mat dctx = dy * view(bs.attn_out_weight).transpose();
    Mat dqkv = Mat::Zero(P, 3 * d);
    for (int h = 0; h < H; ++h) {
      const Mat& p = bc.probs[static_cast<std::size_t>(h)];
      auto q = bc.qkv.middleCols(h * dh, dh);
      auto k = bc.qkv.middleCols(d + h * dh, dh);
      auto v = bc.qkv.middleCols(2 * d + h * dh, dh);
      auto dout = dctx.middleCols(h * dh, dh);
      Mat dp = dout * v.transpose();
      dqkv.middleCols(2 * d + h * dh, dh).noalias() += p.transpose() * dout;
      Mat ds = p.cwiseProduct(dp);
      for (int i = 0; i < P; ++i) {
        const S rowdot = ds.row(i).sum();
        ds.row(i) -= p.row(i) * rowdot;
      }
      ds *= scale;
      dqkv.middleCols(h * dh, dh).noalias() += ds * k;
      dqkv.middleCols(d + h * dh, dh).noalias() += ds.transpose() * q;
    }
    g(bs.qkv_weight).noalias() += bc.a.transpose() * dqkv;
    grow(bs.qkv_bias) += dqkv.colwise().sum();
    Mat da = dqkv * view(bs.qkv_weight).transpose();
    layer_norm_backward(da, bc.xhat1, bc.rstd1, view(bs.ln1_gain).row(0), grow(bs.ln1_gain), grow(bs.ln1_bias), dx);
  }

  if (c.x0_mask.size() > 0) dx.array() *= c.x0_mask.array();

  // Scatter into the embedding tables.
  auto gpos = g(layout_.pos_emb);
  gpos.topRows(P) += dx;
  grow(layout_.bos) += dx.row(0);
  const RowVec total = dx.colwise().sum();
  g(layout_.node_emb).row(seq.node) += total;
  g(layout_.customer_emb).row(seq.customer) += total;
  auto gproj = g(layout_.input_proj);
  const int fn = cfg_.output_width();
  for (int t = 0; t < steps; ++t) {
    auto row = dx.row(t + 1);
    auto toks = seq.step(t);
    for (int f = 0; f < cfg_.features; ++f) gproj.row(f * cfg_.bins + toks[static_cast<std::size_t>(f)]) += row;
    const auto tf = TimeFeatures::at_epoch_minute(seq.start_minute + t);
    gproj.row(fn + tf.minute) += row;
    gproj.row(fn + kMinuteSlots + tf.hour) += row;
    gproj.row(fn + kMinuteSlots + kHourSlots + tf.weekday) += row;
  }
}

template <typename S>
typename Transformer<S>::ForwardResult Transformer<S>::forward(const SequenceView& seq, Mode mode,
                                                              std::uint64_t dropout_seed) const {
  check_sequence(seq, seq.length);
  Cache c;
  run(seq, seq.length, mode, dropout_seed, c);
  ForwardResult out;
  out.bos_logits = c.logits.row(0);
  out.logits = c.logits.bottomRows(seq.length);
  out.hidden = c.z.bottomRows(seq.length);
  return out;
}

template <typename S>
typename Transformer<S>::Mat Transformer<S>::hidden_states(const SequenceView& seq) const {
  check_sequence(seq, seq.length);
  Cache c;
  run(seq, seq.length, Mode::eval, 0, c);
  return c.z.bottomRows(seq.length);
}

template <typename S>
LossSum Transformer<S>::sequence_loss(const SequenceView& seq, Mode mode, std::uint64_t dropout_seed, Vec* grad,
                                      S grad_scale) const {
  const int steps = seq.length - 1;
  check_sequence(seq, steps);
  Cache c;
  run(seq, steps, mode, dropout_seed, c);

  const int N = cfg_.bins;
  const int P = seq.length;
  LossSum sum;
  Mat dlogits;
  if (grad) dlogits.resize(P, cfg_.output_width());
  for (int p = 0; p < P; ++p) {
    auto targets = seq.step(p);
    for (int f = 0; f < cfg_.features; ++f) {
      const int y = targets[static_cast<std::size_t>(f)];
      if (y >= N) throw ValidationError("target token outside the bin vocabulary");
      auto seg = c.logits.row(p).segment(f * N, N);
      Eigen::Index arg = 0;
      const S mx = seg.maxCoeff(&arg);
      const S lse = mx + std::log((seg.array() - mx).exp().sum());
      sum.nll += static_cast<double>(lse - seg(y));
      sum.correct += arg == y ? 1 : 0;
      if (grad) {
        auto dseg = dlogits.row(p).segment(f * N, N);
        dseg = ((seg.array() - lse).exp() * grad_scale).matrix();
        dseg(y) -= grad_scale;
      }
    }
  }
  sum.count = static_cast<std::int64_t>(P) * cfg_.features;
  if (grad) {
    if (grad->size() != params_.size()) throw ValidationError("gradient buffer has the wrong size");
    backward(seq, steps, c, dlogits, *grad);
  }
  return sum;
}

template class Transformer<float>;
template class Transformer<double>;

}  // namespace nfgen
